// Copyright 2026 exsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "exsep/model.hpp"

#include <cmath>

#include <json.hpp>

#include "exsep/checkpoint.hpp"

namespace exsep {

using nlohmann::json;

void ModelConfig::validate() const {
  if (layers < 1) throw ContractError("model: layers must be >= 1");
  if (heads < 1 || d_model % heads != 0)
    throw ContractError("model: d_model must be divisible by heads");
  if (ffn_dim < 1 || bins < 1 || streams < 2 || channels < 1)
    throw ContractError("model: bad dimension in config");
  if (max_len < 1) throw ContractError("model: max_len must be >= 1");
}

std::string ModelConfig::to_json() const {
  json j;
  j["layers"] = layers;
  j["heads"] = heads;
  j["d_model"] = d_model;
  j["ffn_dim"] = ffn_dim;
  j["max_len"] = max_len;
  j["bins"] = bins;
  j["streams"] = streams;
  j["channels"] = channels;
  j["n_fft"] = n_fft;
  j["hop"] = hop;
  j["sample_rate"] = sample_rate;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("model config: bad JSON: ") + e.what());
  }
  ModelConfig cfg;
  cfg.layers = j.at("layers").get<int>();
  cfg.heads = j.at("heads").get<int>();
  cfg.d_model = j.at("d_model").get<int>();
  cfg.ffn_dim = j.at("ffn_dim").get<int>();
  cfg.max_len = j.at("max_len").get<int>();
  cfg.bins = j.at("bins").get<int>();
  cfg.streams = j.at("streams").get<int>();
  cfg.channels = j.at("channels").get<int>();
  cfg.n_fft = j.at("n_fft").get<int>();
  cfg.hop = j.at("hop").get<int>();
  cfg.sample_rate = j.at("sample_rate").get<int>();
  cfg.validate();
  return cfg;
}

MaskStack to_mask_stack(const Tensor& mask, int bins, int streams) {
  if (mask.rank() != 2 || mask.dim(1) != bins * streams)
    throw ContractError("to_mask_stack: tensor is not T x (streams*bins)");
  MaskStack out(mask.dim(0), bins, streams);
  out.v = mask.data();
  return out;
}

namespace {

Tensor glorot(std::vector<int> shape, int fan_in, int fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  long n = 1;
  for (int d : shape) n *= d;
  std::vector<double> data(static_cast<size_t>(n));
  for (double& v : data) v = rng.uniform(-bound, bound);
  return Tensor::from_data(std::move(shape), std::move(data), true);
}

std::string layer_key(int layer, const char* suffix) {
  return "layer" + std::to_string(layer) + "." + suffix;
}

}  // namespace

void SeparatorModel::init(uint64_t seed) {
  cfg_.validate();
  params_ = ParamSet();
  Rng rng(seed);
  const int d = cfg_.d_model;
  const int din = cfg_.input_dim();
  const int dff = cfg_.ffn_dim;
  const int dout = cfg_.bins * cfg_.streams;
  const int table_rows = 2 * cfg_.max_len - 1;

  params_.add("input.w", glorot({din, d}, din, d, rng));
  params_.add("input.b", Tensor::zeros({d}, true));
  params_.add("relpos.table",
              glorot({table_rows, cfg_.d_k()}, table_rows, cfg_.d_k(), rng));

  for (int i = 1; i <= cfg_.layers; ++i) {
    params_.add(layer_key(i, "wq"), glorot({d, d}, d, d, rng));
    params_.add(layer_key(i, "bq"), Tensor::zeros({d}, true));
    // no key bias: softmax is invariant to a shift shared by every key, so
    // the parameter would be non-identifiable
    params_.add(layer_key(i, "wk"), glorot({d, d}, d, d, rng));
    params_.add(layer_key(i, "wv"), glorot({d, d}, d, d, rng));
    params_.add(layer_key(i, "bv"), Tensor::zeros({d}, true));
    params_.add(layer_key(i, "wo"), glorot({d, d}, d, d, rng));
    params_.add(layer_key(i, "bo"), Tensor::zeros({d}, true));
    params_.add(layer_key(i, "norm1.g"), Tensor::full({d}, 1.0, true));
    params_.add(layer_key(i, "norm1.b"), Tensor::zeros({d}, true));
    params_.add(layer_key(i, "ffn.w1"), glorot({d, dff}, d, dff, rng));
    params_.add(layer_key(i, "ffn.b1"), Tensor::zeros({dff}, true));
    params_.add(layer_key(i, "ffn.w2"), glorot({dff, d}, dff, d, rng));
    params_.add(layer_key(i, "ffn.b2"), Tensor::zeros({d}, true));
    params_.add(layer_key(i, "norm2.g"), Tensor::full({d}, 1.0, true));
    params_.add(layer_key(i, "norm2.b"), Tensor::zeros({d}, true));
    params_.add(layer_key(i, "est.w"), glorot({d, dout}, d, dout, rng));
    params_.add(layer_key(i, "est.b"), Tensor::zeros({dout}, true));
  }
}

Tensor SeparatorModel::input_proj(const FeatureGrid& features) const {
  if (features.dims != cfg_.input_dim())
    throw ContractError("input_proj: feature dim " +
                        std::to_string(features.dims) + " != configured " +
                        std::to_string(cfg_.input_dim()));
  Tensor x = Tensor::from_data({features.frames, features.dims}, features.v);
  return add_rowvec(matmul(x, params_.at("input.w")), params_.at("input.b"));
}

Tensor SeparatorModel::attention(const Tensor& h, int layer) const {
  const int t = h.dim(0);
  if (t > cfg_.max_len)
    throw ContractError("attention: chunk of " + std::to_string(t) +
                        " frames exceeds max_len " +
                        std::to_string(cfg_.max_len));
  const int dk = cfg_.d_k();
  const Tensor& rel = params_.at("relpos.table");
  Tensor q = add_rowvec(matmul(h, params_.at(layer_key(layer, "wq"))),
                        params_.at(layer_key(layer, "bq")));
  Tensor k = matmul(h, params_.at(layer_key(layer, "wk")));
  Tensor v = add_rowvec(matmul(h, params_.at(layer_key(layer, "wv"))),
                        params_.at(layer_key(layer, "bv")));

  std::vector<Tensor> heads;
  heads.reserve(static_cast<size_t>(cfg_.heads));
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
  for (int j = 0; j < cfg_.heads; ++j) {
    Tensor qj = slice_cols(q, j * dk, dk);
    Tensor kj = slice_cols(k, j * dk, dk);
    Tensor vj = slice_cols(v, j * dk, dk);
    Tensor scores = add(matmul_nt(qj, kj), relpos_scores(qj, rel, cfg_.max_len));
    Tensor attn = softmax_lastdim(scale(scores, inv_sqrt_dk));
    heads.push_back(matmul(attn, vj));
  }
  Tensor cat = concat_cols(heads);
  return add_rowvec(matmul(cat, params_.at(layer_key(layer, "wo"))),
                    params_.at(layer_key(layer, "bo")));
}

Tensor SeparatorModel::encoder_layer(const Tensor& h, int layer) const {
  Tensor attn_out = attention(h, layer);
  Tensor h1 = layer_norm(add(h, attn_out), params_.at(layer_key(layer, "norm1.g")),
                         params_.at(layer_key(layer, "norm1.b")), kNormEps);
  Tensor ff = add_rowvec(
      matmul(relu(add_rowvec(matmul(h1, params_.at(layer_key(layer, "ffn.w1"))),
                             params_.at(layer_key(layer, "ffn.b1")))),
             params_.at(layer_key(layer, "ffn.w2"))),
      params_.at(layer_key(layer, "ffn.b2")));
  return layer_norm(add(h1, ff), params_.at(layer_key(layer, "norm2.g")),
                    params_.at(layer_key(layer, "norm2.b")), kNormEps);
}

Tensor SeparatorModel::estimate_masks(const Tensor& h, int layer) const {
  if (layer < 1 || layer > cfg_.layers)
    throw ContractError("estimate_masks: no estimator for layer " +
                        std::to_string(layer));
  return sigmoid(add_rowvec(matmul(h, params_.at(layer_key(layer, "est.w"))),
                            params_.at(layer_key(layer, "est.b"))));
}

LayerActivation SeparatorModel::run(
    const FeatureGrid& features,
    const std::function<bool(int, const Tensor&)>& stop) const {
  LayerActivation act;
  Tensor h = input_proj(features);
  for (int i = 1; i <= cfg_.layers; ++i) {
    h = encoder_layer(h, i);
    Tensor m = estimate_masks(h, i);
    act.hidden.push_back(h);
    act.masks.push_back(m);
    act.exit_layer = i;
    if (stop && stop(i, m)) break;
  }
  return act;
}

void SeparatorModel::save(const std::string& path) const {
  save_checkpoint(path, params_, cfg_.to_json());
}

SeparatorModel SeparatorModel::load(const std::string& path, bool trainable) {
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.config_json.empty())
    throw DataError("model: checkpoint carries no config record: " + path);
  SeparatorModel model(ModelConfig::from_json(ckpt.config_json));
  model.init(0);
  for (const auto& name : model.params_.names()) {
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end())
      throw DataError("model: checkpoint missing parameter " + name);
    Tensor& dst = model.params_.at(name);
    if (it->second.shape() != dst.shape())
      throw DataError("model: checkpoint shape mismatch for " + name);
    dst = Tensor::from_data(it->second.shape(), it->second.data(), trainable);
  }
  return model;
}

}  // namespace exsep
