// Copyright 2026 exsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

// Depth-adaptive inference: run encoder layers in order, estimate masks at
// each one, and stop as soon as the masks of two consecutive layers are
// closer than the threshold. Includes the sliding-window driver, mask
// stitching across windows, and masked resynthesis.

#include <optional>
#include <string>
#include <vector>

#include "exsep/mask.hpp"
#include "exsep/model.hpp"
#include "exsep/signal.hpp"

namespace exsep {

struct ExitPolicy {
  double tau = 0.0;  // 0 never exits early; infinity always exits at min_layer
  int min_layer = 2;
  bool include_noise = true;  // distance over all streams vs speakers only
};

struct ExitTrace {
  std::string chunk_id;
  int exit_layer = 0;
  std::vector<double> dists;  // dists[k] is the distance at layer min_layer+k
  int64_t ns = 0;             // wall clock of the encoder pass
};

// Mean over (t,f) of the L2 norm of the mask difference across the stream
// axis.
double layer_distance(const MaskStack& a, const MaskStack& b,
                      bool include_noise = true);

std::pair<MaskStack, ExitTrace> run_early_exit(const SeparatorModel& model,
                                               const FeatureGrid& features,
                                               const ExitPolicy& policy,
                                               const std::string& chunk_id = "");

// Covering [start, end) windows: starts at multiples of `hop`, final partial
// window retained. Count = ceil(max(len-window,0)/hop) + 1.
std::vector<std::pair<int, int>> css_windows(int len, int window, int hop);

// Folds per-window masks into a full-length stack. Each new window is
// speaker-permuted to best match the already-stitched overlap, then
// cross-faded linearly over the overlap region.
MaskStack stitch_masks(const std::vector<MaskStack>& chunks,
                       const std::vector<std::pair<int, int>>& windows,
                       int total_frames);

// Elementwise mask scaling of the channel-1 spectrogram, then inverse STFT.
std::vector<double> reconstruct(const MaskStack& masks, int stream,
                                const Spectrogram& mixture_ch1);

struct CssConfig {
  int window_frames = 192;
  int hop_frames = 96;
};

struct SeparationResult {
  std::vector<std::vector<double>> streams;  // one waveform per output stream
  MaskStack stitched;
  std::vector<ExitTrace> traces;
};

// Full pipeline over a multi-channel signal: STFT, sliding windows,
// early-exit inference per window, stitching, resynthesis. Output waveforms
// are padded to the input length.
SeparationResult separate(const SeparatorModel& model,
                          const std::vector<std::vector<double>>& channels,
                          int sample_rate, const ExitPolicy& policy,
                          const CssConfig& css,
                          const std::string& chunk_id_prefix = "chunk");

void write_traces(const std::string& path, const std::vector<ExitTrace>& traces);
std::vector<ExitTrace> read_traces(const std::string& path);

}  // namespace exsep
