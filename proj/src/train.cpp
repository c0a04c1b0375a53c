// Copyright 2026 exsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "exsep/train.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <memory>
#include <numeric>

#include "exsep/checkpoint.hpp"
#include "exsep/scene.hpp"

namespace exsep {

namespace {

std::vector<std::vector<int>> speaker_permutations(int n) {
  std::vector<int> ident(static_cast<size_t>(n));
  std::iota(ident.begin(), ident.end(), 0);
  std::vector<std::vector<int>> perms;
  do {
    perms.push_back(ident);
  } while (std::next_permutation(ident.begin(), ident.end()));
  return perms;
}

}  // namespace

PitResult pit_loss(const Tensor& pred, const MaskStack& ref) {
  const int bins = ref.bins;
  const int streams = ref.streams;
  if (pred.rank() != 2 || pred.dim(0) != ref.frames ||
      pred.dim(1) != bins * streams)
    throw ContractError("pit_loss: stream/shape mismatch between prediction and reference");
  if (streams < 2) throw ContractError("pit_loss: need at least one speaker and a noise stream");
  const int n_spk = streams - 1;
  const int frames = ref.frames;

  // reference stream slices as constant leaves
  std::vector<Tensor> ref_slices;
  for (int s = 0; s < streams; ++s) {
    std::vector<double> data(static_cast<size_t>(frames) * bins);
    for (int t = 0; t < frames; ++t)
      for (int f = 0; f < bins; ++f)
        data[static_cast<size_t>(t) * bins + static_cast<size_t>(f)] = ref.at(t, f, s);
    ref_slices.push_back(Tensor::from_data({frames, bins}, std::move(data)));
  }

  // pairwise squared-error scalars between predicted and reference speakers
  std::vector<Tensor> pred_slices;
  for (int p = 0; p < streams; ++p)
    pred_slices.push_back(slice_cols(pred, p * bins, bins));
  std::vector<std::vector<Tensor>> cost(static_cast<size_t>(n_spk),
                                        std::vector<Tensor>(static_cast<size_t>(n_spk)));
  for (int p = 0; p < n_spk; ++p)
    for (int r = 0; r < n_spk; ++r)
      cost[static_cast<size_t>(p)][static_cast<size_t>(r)] =
          sum_sq_diff(pred_slices[static_cast<size_t>(p)], ref_slices[static_cast<size_t>(r)]);
  Tensor noise_cost = sum_sq_diff(pred_slices[static_cast<size_t>(n_spk)],
                                  ref_slices[static_cast<size_t>(n_spk)]);

  const auto perms = speaker_permutations(n_spk);
  int best = 0;
  double best_val = 0.0;
  for (size_t pi = 0; pi < perms.size(); ++pi) {
    double val = noise_cost.item();
    for (int r = 0; r < n_spk; ++r)
      val += cost[static_cast<size_t>(perms[pi][static_cast<size_t>(r)])][static_cast<size_t>(r)].item();
    if (pi == 0 || val < best_val) {
      best_val = val;
      best = static_cast<int>(pi);
    }
  }

  Tensor total = noise_cost;
  for (int r = 0; r < n_spk; ++r)
    total = add(total, cost[static_cast<size_t>(perms[static_cast<size_t>(best)][static_cast<size_t>(r)])]
                           [static_cast<size_t>(r)]);
  const double count = static_cast<double>(frames) * bins * streams;
  PitResult result;
  result.loss = divide_scalar(total, count);
  result.perm = perms[static_cast<size_t>(best)];
  return result;
}

double pit_loss_value(const MaskStack& pred, const MaskStack& ref,
                      std::vector<int>* perm_out) {
  if (!pred.same_shape(ref))
    throw ContractError("pit_loss_value: mask stack shapes disagree");
  if (pred.streams < 2) throw ContractError("pit_loss_value: need >= 2 streams");
  const int n_spk = pred.streams - 1;
  std::vector<std::vector<double>> cost(static_cast<size_t>(n_spk),
                                        std::vector<double>(static_cast<size_t>(n_spk), 0.0));
  double noise_cost = 0.0;
  for (int t = 0; t < pred.frames; ++t)
    for (int f = 0; f < pred.bins; ++f) {
      for (int p = 0; p < n_spk; ++p)
        for (int r = 0; r < n_spk; ++r) {
          const double d = pred.at(t, f, p) - ref.at(t, f, r);
          cost[static_cast<size_t>(p)][static_cast<size_t>(r)] += d * d;
        }
      const double dn = pred.at(t, f, n_spk) - ref.at(t, f, n_spk);
      noise_cost += dn * dn;
    }
  const auto perms = speaker_permutations(n_spk);
  double best_val = 0.0;
  size_t best = 0;
  for (size_t pi = 0; pi < perms.size(); ++pi) {
    double val = noise_cost;
    for (int r = 0; r < n_spk; ++r)
      val += cost[static_cast<size_t>(perms[pi][static_cast<size_t>(r)])][static_cast<size_t>(r)];
    if (pi == 0 || val < best_val) {
      best_val = val;
      best = pi;
    }
  }
  if (perm_out) *perm_out = perms[best];
  return best_val / (static_cast<double>(pred.frames) * pred.bins * pred.streams);
}

Tensor weighted_loss(const std::vector<Tensor>& per_layer) {
  if (per_layer.empty()) throw ContractError("weighted_loss: no layer losses");
  Tensor acc = scale(per_layer[0], 1.0);
  for (size_t i = 1; i < per_layer.size(); ++i)
    acc = add(acc, scale(per_layer[i], static_cast<double>(i + 1)));
  const double denom =
      static_cast<double>(per_layer.size()) * (per_layer.size() + 1) / 2.0;
  return divide_scalar(acc, denom);
}

double weighted_loss_value(const std::vector<double>& per_layer) {
  if (per_layer.empty()) throw ContractError("weighted_loss: no layer losses");
  double acc = per_layer[0] * 1.0;
  for (size_t i = 1; i < per_layer.size(); ++i)
    acc += per_layer[i] * static_cast<double>(i + 1);
  const double denom =
      static_cast<double>(per_layer.size()) * (per_layer.size() + 1) / 2.0;
  return acc / denom;
}

void adamw_step(ParamSet& params, OptimState& state, double lr,
                const AdamWConfig& cfg) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (const auto& name : params.names()) {
    Tensor& p = params.at(name);
    std::vector<double>& w = p.leaf_data();
    const std::vector<double>& g = p.grad();
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.size() != w.size()) m.assign(w.size(), 0.0);
    if (v.size() != w.size()) v.assign(w.size(), 0.0);
    for (size_t i = 0; i < w.size(); ++i) {
      w[i] *= 1.0 - lr * cfg.weight_decay;
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

double clip_gradients(ParamSet& params, double max_norm) {
  double sq = 0.0;
  for (const auto& name : params.names())
    for (double g : params.at(name).grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (const auto& name : params.names()) {
      Tensor& p = params.at(name);
      p.node()->ensure_grad();
      for (double& g : p.node()->grad) g *= s;
    }
  }
  return norm;
}

double LrSchedule::at(long step) const {
  if (step < 0) throw ContractError("lr schedule: negative step");
  if (warmup > 0 && step < warmup)
    return peak * static_cast<double>(step) / static_cast<double>(warmup);
  if (step >= total) return 0.0;
  const long decay = std::max<long>(1, total - warmup);
  return peak * static_cast<double>(total - step) / static_cast<double>(decay);
}

ChunkLoss chunk_loss(const SeparatorModel& model, const FeatureGrid& features,
                     const MaskStack& ref) {
  ChunkLoss out;
  LayerActivation act = model.forward_all(features);
  for (const Tensor& mask : act.masks) {
    PitResult pit = pit_loss(mask, ref);
    out.per_layer.push_back(pit.loss);
    out.perms.push_back(pit.perm);
  }
  out.weighted = weighted_loss(out.per_layer);
  return out;
}

// --- train loop ---------------------------------------------------------------

namespace {

struct PreparedScene {
  std::vector<Spectrogram> specs;
  MaskStack ideal;
  int frames = 0;
};

class SceneCache {
 public:
  SceneCache(const ModelConfig& cfg, size_t capacity)
      : cfg_(cfg), capacity_(capacity) {}

  std::shared_ptr<PreparedScene> get(const std::string& stem) {
    auto it = map_.find(stem);
    if (it != map_.end()) return it->second;
    auto prepared = std::make_shared<PreparedScene>();
    AudioScene scene = load_scene(stem);
    scene.spec.n_fft = cfg_.n_fft;
    scene.spec.hop = cfg_.hop;
    if (scene.spec.channels < cfg_.channels)
      throw DataError("train: scene " + stem + " has fewer channels than the model");
    for (int c = 0; c < cfg_.channels; ++c)
      prepared->specs.push_back(stft(scene.mixture[static_cast<size_t>(c)],
                                     cfg_.n_fft, cfg_.hop, scene.spec.sample_rate));
    prepared->ideal = ideal_masks(scene, cfg_.n_fft, cfg_.hop);
    prepared->frames = prepared->specs[0].frames;
    if (static_cast<int>(scene.references.size()) + 1 != cfg_.streams)
      throw DataError("train: scene " + stem + " stream count does not match model");
    map_[stem] = prepared;
    order_.push_back(stem);
    while (order_.size() > capacity_) {
      map_.erase(order_.front());
      order_.pop_front();
    }
    return prepared;
  }

 private:
  ModelConfig cfg_;
  size_t capacity_;
  std::unordered_map<std::string, std::shared_ptr<PreparedScene>> map_;
  std::deque<std::string> order_;
};

struct ChunkRef {
  int scene = 0;
  int start = 0;
  int len = 0;
};

std::vector<ChunkRef> enumerate_chunks(const std::vector<int>& scene_frames,
                                       int crop) {
  std::vector<ChunkRef> chunks;
  for (size_t s = 0; s < scene_frames.size(); ++s) {
    const int frames = scene_frames[s];
    if (frames <= crop) {
      chunks.push_back({static_cast<int>(s), 0, frames});
      continue;
    }
    const int stride = std::max(1, crop / 2);
    for (int start = 0; start + crop <= frames; start += stride)
      chunks.push_back({static_cast<int>(s), start, crop});
  }
  return chunks;
}

MaskStack slice_mask(const MaskStack& full, int t0, int len) {
  MaskStack out(len, full.bins, full.streams);
  for (int t = 0; t < len; ++t)
    for (int s = 0; s < full.streams; ++s)
      for (int f = 0; f < full.bins; ++f)
        out.at(t, f, s) = full.at(t0 + t, f, s);
  return out;
}

double validate_model(const SeparatorModel& model, SceneCache& cache,
                      const std::vector<std::string>& stems, int crop,
                      double* const_baseline) {
  NoGradGuard ng;
  double mse_sum = 0.0, base_sum = 0.0;
  long count = 0;
  for (const std::string& stem : stems) {
    auto prep = cache.get(stem);
    std::vector<int> frames{prep->frames};
    for (const ChunkRef& ch : enumerate_chunks(frames, crop)) {
      FeatureGrid grid = assemble_features(prep->specs, ch.start, ch.start + ch.len);
      LayerActivation act = model.forward_all(grid);
      MaskStack pred = to_mask_stack(act.masks.back(), model.config().bins,
                                     model.config().streams);
      MaskStack ref = slice_mask(prep->ideal, ch.start, ch.len);
      mse_sum += pit_loss_value(pred, ref);
      MaskStack half = ref;
      std::fill(half.v.begin(), half.v.end(), 0.5);
      base_sum += pit_loss_value(half, ref);
      ++count;
    }
  }
  if (count == 0) throw DataError("train: empty validation set");
  if (const_baseline) *const_baseline = base_sum / static_cast<double>(count);
  return mse_sum / static_cast<double>(count);
}

void save_train_state(const std::string& path, const SeparatorModel& model,
                      const OptimState& state) {
  std::map<std::string, Tensor> tensors;
  for (const auto& name : model.params().names()) {
    const Tensor& p = model.params().at(name);
    tensors.emplace(name, Tensor::from_data(p.shape(), p.data()));
    auto mit = state.m.find(name);
    auto vit = state.v.find(name);
    if (mit != state.m.end())
      tensors.emplace("opt.m." + name, Tensor::from_data(p.shape(), mit->second));
    if (vit != state.v.end())
      tensors.emplace("opt.v." + name, Tensor::from_data(p.shape(), vit->second));
  }
  tensors.emplace("opt.step",
                  Tensor::from_data({1}, {static_cast<double>(state.step)}));
  save_checkpoint(path, tensors, model.config().to_json());
}

}  // namespace

TrainResult train(const std::string& manifest_path, SeparatorModel& model,
                  const TrainConfig& cfg) {
  const std::vector<ManifestEntry> entries = read_manifest(manifest_path);
  if (entries.empty()) throw DataError("train: manifest is empty: " + manifest_path);

  std::vector<std::string> stems;
  for (const ManifestEntry& e : entries) stems.push_back(e.path);
  Rng rng(cfg.seed ^ 0x7261696e);
  for (size_t i = stems.size(); i > 1; --i)
    std::swap(stems[i - 1], stems[rng.uniform_index(i)]);
  const size_t val_count =
      stems.size() > 1
          ? std::max<size_t>(1, static_cast<size_t>(std::lround(
                                    cfg.val_fraction * static_cast<double>(stems.size()))))
          : 0;
  std::vector<std::string> val_stems(stems.end() - static_cast<long>(val_count), stems.end());
  stems.resize(stems.size() - val_count);
  if (stems.empty()) throw DataError("train: no training scenes after validation split");
  if (val_stems.empty()) val_stems = stems;  // single-scene smoke runs

  SceneCache cache(model.config(), 16);
  OptimState opt;

  if (!cfg.resume_from.empty()) {
    Checkpoint ckpt = load_checkpoint(cfg.resume_from);
    for (const auto& name : model.params().names()) {
      auto it = ckpt.tensors.find(name);
      if (it == ckpt.tensors.end())
        throw DataError("train: resume checkpoint missing " + name);
      model.params().at(name) =
          Tensor::from_data(it->second.shape(), it->second.data(), true);
      auto mit = ckpt.tensors.find("opt.m." + name);
      if (mit != ckpt.tensors.end()) opt.m[name] = mit->second.data();
      auto vit = ckpt.tensors.find("opt.v." + name);
      if (vit != ckpt.tensors.end()) opt.v[name] = vit->second.data();
    }
    auto sit = ckpt.tensors.find("opt.step");
    if (sit != ckpt.tensors.end())
      opt.step = static_cast<long>(sit->second.data()[0]);
  }

  // chunk pool
  std::vector<int> scene_frames;
  for (const std::string& stem : stems) scene_frames.push_back(cache.get(stem)->frames);
  std::vector<ChunkRef> pool = enumerate_chunks(scene_frames, cfg.crop_frames);
  if (pool.empty()) throw DataError("train: no usable chunks");
  const long steps_per_epoch =
      std::max<long>(1, static_cast<long>(pool.size()) / std::max(1, cfg.batch));

  std::ofstream log;
  if (!cfg.log_csv.empty()) {
    log.open(cfg.log_csv, std::ios::trunc);
    if (!log) throw DataError("train: cannot open log: " + cfg.log_csv);
    log << "step,lr";
    for (int i = 1; i <= model.config().layers; ++i) log << ",L" << i;
    log << ",weighted\n";
  }

  TrainResult result;
  result.best_val_mse = -1.0;
  size_t cursor = pool.size();  // force shuffle on first use
  long validations = 0;

  for (long step = opt.step; step < cfg.steps; ++step) {
    model.params().zero_grad();
    std::vector<double> layer_sums(static_cast<size_t>(model.config().layers), 0.0);
    double weighted_sum = 0.0;
    bool nan_hit = false;

    for (int b = 0; b < cfg.batch; ++b) {
      if (cursor >= pool.size()) {
        for (size_t i = pool.size(); i > 1; --i)
          std::swap(pool[i - 1], pool[rng.uniform_index(i)]);
        cursor = 0;
      }
      const ChunkRef ch = pool[cursor++];
      auto prep = cache.get(stems[static_cast<size_t>(ch.scene)]);
      FeatureGrid grid = assemble_features(prep->specs, ch.start, ch.start + ch.len);
      MaskStack ref = slice_mask(prep->ideal, ch.start, ch.len);
      ChunkLoss loss = chunk_loss(model, grid, ref);
      const double w = loss.weighted.item();
      if (!std::isfinite(w)) {
        nan_hit = true;
        clear_tape();
        break;
      }
      for (size_t i = 0; i < loss.per_layer.size(); ++i)
        layer_sums[i] += loss.per_layer[i].item();
      weighted_sum += w;
      backward(divide_scalar(loss.weighted, static_cast<double>(cfg.batch)));
      clear_tape();
    }

    if (nan_hit) {
      result.aborted_nan = true;
      result.steps_done = step;
      result.best_checkpoint = cfg.ckpt_best;  // last good checkpoint stays
      return result;
    }

    clip_gradients(model.params(), cfg.clip_norm);
    const double lr = cfg.schedule.at(step);
    adamw_step(model.params(), opt, lr, cfg.adamw);
    result.steps_done = step + 1;

    const bool log_now = !cfg.log_csv.empty() &&
                         (step % std::max<long>(1, cfg.log_interval) == 0 ||
                          step + 1 == cfg.steps);
    if (log_now) {
      log << step << ',' << lr;
      for (double s : layer_sums) log << ',' << s / cfg.batch;
      log << ',' << weighted_sum / cfg.batch << '\n';
      log.flush();
    }

    const long interval = cfg.val_interval > 0 ? cfg.val_interval : steps_per_epoch;
    if ((step + 1) % interval == 0 || step + 1 == cfg.steps) {
      double baseline = 0.0;
      const double val = validate_model(model, cache, val_stems,
                                        cfg.crop_frames, &baseline);
      ++validations;
      if (validations == 1) result.epoch1_val_mse = val;
      result.final_val_mse = val;
      result.baseline_const_mse = baseline;
      if (result.best_val_mse < 0.0 || val < result.best_val_mse) {
        result.best_val_mse = val;
        if (!cfg.ckpt_best.empty()) {
          model.save(cfg.ckpt_best);
          result.best_checkpoint = cfg.ckpt_best;
        }
      }
      if (!cfg.ckpt_last.empty()) save_train_state(cfg.ckpt_last, model, opt);
    }
  }

  if (validations == 0) {
    // run at least one validation so the result fields are meaningful
    double baseline = 0.0;
    const double val = validate_model(model, cache, val_stems, cfg.crop_frames,
                                      &baseline);
    result.epoch1_val_mse = val;
    result.final_val_mse = val;
    result.baseline_const_mse = baseline;
    result.best_val_mse = val;
    if (!cfg.ckpt_best.empty()) {
      model.save(cfg.ckpt_best);
      result.best_checkpoint = cfg.ckpt_best;
    }
  }
  return result;
}

}  // namespace exsep
