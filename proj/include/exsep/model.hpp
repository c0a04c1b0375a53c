// Copyright 2026 exsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

// Transformer encoder for mask estimation: post-norm residual layers,
// multi-head self-attention with a learned relative-position table shared
// across heads and layers, and a sigmoid mask estimator attached to every
// layer so the forward pass can stop after any of them.

#include <functional>
#include <string>
#include <vector>

#include "exsep/mask.hpp"
#include "exsep/signal.hpp"
#include "exsep/tensor.hpp"

namespace exsep {

struct ModelConfig {
  int layers = 8;
  int heads = 4;
  int d_model = 64;
  int ffn_dim = 256;
  int max_len = 200;  // maximum chunk length in frames
  int bins = 129;
  int streams = 3;  // two speakers + noise
  int channels = 3;
  int n_fft = 256;
  int hop = 128;
  int sample_rate = 16000;

  int d_k() const { return d_model / heads; }
  int input_dim() const { return channels * bins; }
  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

// Hidden states and per-layer masks for the layers actually executed.
struct LayerActivation {
  std::vector<Tensor> hidden;
  std::vector<Tensor> masks;
  int exit_layer = 0;
};

MaskStack to_mask_stack(const Tensor& mask, int bins, int streams);

class SeparatorModel {
 public:
  SeparatorModel() = default;
  explicit SeparatorModel(const ModelConfig& cfg) : cfg_(cfg) { cfg_.validate(); }

  void init(uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  Tensor input_proj(const FeatureGrid& features) const;
  Tensor attention(const Tensor& h, int layer) const;
  Tensor encoder_layer(const Tensor& h, int layer) const;
  Tensor estimate_masks(const Tensor& h, int layer) const;

  // Runs layers in order, evaluating the estimator after each one. When
  // `stop` returns true the pass ends there; a null `stop` runs all layers.
  // Layer indices are 1-based.
  LayerActivation run(const FeatureGrid& features,
                      const std::function<bool(int, const Tensor&)>& stop =
                          nullptr) const;
  LayerActivation forward_all(const FeatureGrid& features) const {
    return run(features, nullptr);
  }

  void save(const std::string& path) const;
  static SeparatorModel load(const std::string& path, bool trainable = false);

  static constexpr double kNormEps = 1e-5;

 private:
  ModelConfig cfg_;
  ParamSet params_;
};

}  // namespace exsep
