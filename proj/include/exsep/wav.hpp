// Copyright 2026 exsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

// Audio containers. WAV supports PCM 16-bit and IEEE float 32-bit, mono or
// interleaved multi-channel. The raw f64 format is little-endian with header
// (channels u16, sample_rate u32, per-channel length u64) followed by planar
// channel data.

#include <string>
#include <vector>

#include "exsep/common.hpp"

namespace exsep {

struct Audio {
  int sample_rate = 0;
  std::vector<std::vector<double>> channels;  // [channel][sample]

  int num_channels() const { return static_cast<int>(channels.size()); }
  long length() const {
    return channels.empty() ? 0 : static_cast<long>(channels[0].size());
  }
};

Audio read_wav(const std::string& path);
// bits: 16 (PCM) or 32 (IEEE float)
void write_wav(const std::string& path, const Audio& audio, int bits = 16);

Audio read_raw_f64(const std::string& path);
void write_raw_f64(const std::string& path, const Audio& audio);

// Reads either container, keyed on the .wav extension.
Audio read_audio(const std::string& path);

}  // namespace exsep
