// Copyright 2026 exsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <vector>

#include "exsep/common.hpp"

namespace exsep {

// Per time-frequency gains in [0,1], one slice per output stream. Stream
// order: speaker 1, speaker 2, ..., noise last. Layout matches the model's
// estimator output rows: frame-major, then stream, then bin.
struct MaskStack {
  int frames = 0;
  int bins = 0;
  int streams = 0;
  std::vector<double> v;

  MaskStack() = default;
  MaskStack(int t, int f, int s)
      : frames(t), bins(f), streams(s),
        v(static_cast<size_t>(t) * f * s, 0.0) {}

  double& at(int t, int f, int s) {
    return v[(static_cast<size_t>(t) * streams + static_cast<size_t>(s)) * bins +
             static_cast<size_t>(f)];
  }
  double at(int t, int f, int s) const {
    return v[(static_cast<size_t>(t) * streams + static_cast<size_t>(s)) * bins +
             static_cast<size_t>(f)];
  }

  bool same_shape(const MaskStack& o) const {
    return frames == o.frames && bins == o.bins && streams == o.streams;
  }
};

}  // namespace exsep
