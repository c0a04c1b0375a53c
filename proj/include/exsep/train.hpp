// Copyright 2026 exsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

// Mask-estimation training: permutation-invariant squared error per layer
// estimator, depth-weighted aggregate loss (layer i weighted i / sum_i i),
// decoupled-weight-decay Adam, and a warmup/linear-decay schedule.

#include <string>
#include <unordered_map>
#include <vector>

#include "exsep/mask.hpp"
#include "exsep/model.hpp"
#include "exsep/tensor.hpp"

namespace exsep {

struct PitResult {
  Tensor loss;            // scalar: mean squared error under the best pairing
  std::vector<int> perm;  // perm[r] = predicted speaker stream matched to ref r
};

// Minimum over speaker-stream pairings of the mean squared error across all
// (frame, bin, stream) entries. The noise stream (last) is always matched to
// noise. Gradient flows only through the winning pairing.
PitResult pit_loss(const Tensor& pred, const MaskStack& ref);

// Plain-value counterpart used by validation paths.
double pit_loss_value(const MaskStack& pred, const MaskStack& ref,
                      std::vector<int>* perm = nullptr);

// sum_i (i * loss_i) / sum_i i, accumulated in layer order.
Tensor weighted_loss(const std::vector<Tensor>& per_layer);
double weighted_loss_value(const std::vector<double>& per_layer);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;
};

struct OptimState {
  std::unordered_map<std::string, std::vector<double>> m;
  std::unordered_map<std::string, std::vector<double>> v;
  long step = 0;
};

void adamw_step(ParamSet& params, OptimState& state, double lr,
                const AdamWConfig& cfg);

// Global-norm gradient clipping; returns the pre-clip norm.
double clip_gradients(ParamSet& params, double max_norm);

struct LrSchedule {
  double peak = 1e-3;
  long warmup = 500;
  long total = 20000;
  double at(long step) const;
};

struct ChunkLoss {
  std::vector<Tensor> per_layer;
  Tensor weighted;
  std::vector<std::vector<int>> perms;  // one pairing per layer
};

// Full-depth forward plus per-layer PIT losses for one chunk.
ChunkLoss chunk_loss(const SeparatorModel& model, const FeatureGrid& features,
                     const MaskStack& ref);

struct TrainConfig {
  long steps = 20000;
  int batch = 4;
  int crop_frames = 100;
  LrSchedule schedule;
  AdamWConfig adamw;
  double clip_norm = 5.0;
  uint64_t seed = 0;
  double val_fraction = 0.1;
  long val_interval = 0;  // 0 = validate once per epoch
  long log_interval = 25;
  std::string log_csv;
  std::string ckpt_best;
  std::string ckpt_last;
  std::string resume_from;
};

struct TrainResult {
  long steps_done = 0;
  double epoch1_val_mse = 0.0;
  double best_val_mse = 0.0;
  double final_val_mse = 0.0;
  double baseline_const_mse = 0.0;  // constant-0.5 predictor on validation
  bool aborted_nan = false;
  std::string best_checkpoint;
};

TrainResult train(const std::string& manifest_path, SeparatorModel& model,
                  const TrainConfig& cfg);

}  // namespace exsep
