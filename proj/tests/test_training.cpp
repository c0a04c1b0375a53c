// Copyright 2026 exsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "exsep/scene.hpp"
#include "exsep/train.hpp"
#include "test_util.hpp"

using namespace exsep;

namespace {

MaskStack random_masks(int t, int f, int s, Rng& rng) {
  MaskStack m(t, f, s);
  for (double& v : m.v) v = rng.uniform();
  return m;
}

Tensor mask_tensor(const MaskStack& m, bool requires_grad = false) {
  return Tensor::from_data({m.frames, m.streams * m.bins}, m.v, requires_grad);
}

// exhaustive oracle over every speaker pairing
double brute_force_pit(const MaskStack& pred, const MaskStack& ref) {
  const int n_spk = pred.streams - 1;
  std::vector<int> perm(static_cast<size_t>(n_spk));
  std::iota(perm.begin(), perm.end(), 0);
  double best = 1e300;
  do {
    double acc = 0.0;
    for (int t = 0; t < pred.frames; ++t)
      for (int f = 0; f < pred.bins; ++f) {
        for (int r = 0; r < n_spk; ++r) {
          const double d = pred.at(t, f, perm[static_cast<size_t>(r)]) - ref.at(t, f, r);
          acc += d * d;
        }
        const double dn = pred.at(t, f, n_spk) - ref.at(t, f, n_spk);
        acc += dn * dn;
      }
    best = std::min(best, acc);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / static_cast<double>(pred.v.size());
}

MaskStack swap_speakers(const MaskStack& m) {
  MaskStack out = m;
  for (int t = 0; t < m.frames; ++t)
    for (int f = 0; f < m.bins; ++f) {
      out.at(t, f, 0) = m.at(t, f, 1);
      out.at(t, f, 1) = m.at(t, f, 0);
    }
  return out;
}

}  // namespace

TEST_CASE("pit loss: swapped prediction recovers the swap at zero loss") {
  Rng rng(1);
  MaskStack ref = random_masks(4, 6, 3, rng);
  MaskStack pred = swap_speakers(ref);
  PitResult res = pit_loss(mask_tensor(pred), ref);
  CHECK(res.loss.item() == 0.0);
  CHECK(res.perm == std::vector<int>{1, 0});
  clear_tape();
}

TEST_CASE("pit loss equals the brute-force permutation oracle") {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    MaskStack ref = random_masks(3, 5, 3, rng);
    MaskStack pred = random_masks(3, 5, 3, rng);
    const double expect = brute_force_pit(pred, ref);
    PitResult graph = pit_loss(mask_tensor(pred), ref);
    CHECK(std::fabs(graph.loss.item() - expect) < 1e-12);
    CHECK(std::fabs(pit_loss_value(pred, ref) - expect) < 1e-12);
    clear_tape();
  }
}

TEST_CASE("pit loss is invariant under relabeling the reference speakers") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    MaskStack ref = random_masks(3, 4, 3, rng);
    MaskStack pred = random_masks(3, 4, 3, rng);
    std::vector<int> p1, p2;
    const double a = pit_loss_value(pred, ref, &p1);
    const double b = pit_loss_value(pred, swap_speakers(ref), &p2);
    CHECK(std::fabs(a - b) < 1e-12);
    if (p1[0] != p1[1]) CHECK(p1 != p2);  // pairing flips with the relabel
  }
}

TEST_CASE("pit loss rejects stream mismatches") {
  Rng rng(4);
  MaskStack ref = random_masks(3, 4, 3, rng);
  MaskStack narrow = random_masks(3, 4, 2, rng);
  CHECK_THROWS_AS(pit_loss(mask_tensor(narrow), ref), ContractError);
  CHECK_THROWS_AS(pit_loss_value(narrow, ref), ContractError);
}

TEST_CASE("pit gradient flows only through the winning pairing") {
  Rng rng(5);
  MaskStack ref = random_masks(2, 3, 3, rng);
  // prediction close to the identity pairing: identity must win
  MaskStack pred = ref;
  for (double& v : pred.v) v = std::clamp(v + 0.01 * rng.normal(), 0.0, 1.0);
  Tensor pred_t = mask_tensor(pred, true);
  PitResult res = pit_loss(pred_t, ref);
  REQUIRE(res.perm == std::vector<int>{0, 1});
  backward(res.loss);
  const double n = static_cast<double>(pred.v.size());
  for (int t = 0; t < 2; ++t)
    for (int f = 0; f < 3; ++f)
      for (int s = 0; s < 3; ++s) {
        const size_t idx = (static_cast<size_t>(t) * 3 + static_cast<size_t>(s)) * 3 +
                           static_cast<size_t>(f);
        const double expect = 2.0 * (pred.at(t, f, s) - ref.at(t, f, s)) / n;
        CHECK(pred_t.grad()[idx] == doctest::Approx(expect).epsilon(1e-12));
      }
  clear_tape();
}

TEST_CASE("weighted loss follows the depth-weighted mean exactly") {
  Tensor l1 = Tensor::scalar(0.3);
  Tensor l2 = Tensor::scalar(0.0);
  const double expect2 = (1.0 * 0.3 + 2.0 * 0.0) / 3.0;
  CHECK(weighted_loss({l1, l2}).item() == expect2);
  CHECK(weighted_loss_value({0.3, 0.0}) == expect2);
  clear_tape();

  // equal per-layer losses pass through unchanged: the weights sum to one
  std::vector<double> equal(16, 0.7315);
  CHECK(weighted_loss_value(equal) == doctest::Approx(0.7315).epsilon(1e-15));

  // I=16: denominator 136, deepest layer weighted 16/136
  std::vector<double> only_last(16, 0.0);
  only_last[15] = 1.0;
  CHECK(weighted_loss_value(only_last) == doctest::Approx(16.0 / 136.0).epsilon(1e-15));

  // graph and value routes agree bitwise
  Rng rng(6);
  std::vector<Tensor> tensors;
  std::vector<double> values;
  for (int i = 0; i < 16; ++i) {
    const double v = rng.uniform();
    tensors.push_back(Tensor::scalar(v));
    values.push_back(v);
  }
  CHECK(weighted_loss(tensors).item() == weighted_loss_value(values));
  clear_tape();
}

TEST_CASE("weighted loss weights are positive, increasing, and normalized") {
  for (int layers : {1, 2, 5, 16}) {
    std::vector<double> probe(static_cast<size_t>(layers), 0.0);
    double prev = 0.0, sum = 0.0;
    for (int i = 0; i < layers; ++i) {
      std::fill(probe.begin(), probe.end(), 0.0);
      probe[static_cast<size_t>(i)] = 1.0;
      const double w = weighted_loss_value(probe);
      CHECK(w > prev);
      prev = w;
      sum += w;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("adamw: zero-grad fixpoints and the decoupled decay") {
  ParamSet params;
  params.add("w", Tensor::from_data({3}, {1.0, -2.0, 0.5}, true));
  params.at("w").zero_grad();

  OptimState state;
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  adamw_step(params, state, 0.1, cfg);
  CHECK(params.at("w").data() == std::vector<double>{1.0, -2.0, 0.5});

  cfg.weight_decay = 0.01;
  OptimState state2;
  adamw_step(params, state2, 0.1, cfg);
  const double shrink = 1.0 - 0.1 * 0.01;
  CHECK(params.at("w").data()[0] == doctest::Approx(1.0 * shrink).epsilon(1e-15));
  CHECK(params.at("w").data()[1] == doctest::Approx(-2.0 * shrink).epsilon(1e-15));
}

TEST_CASE("adamw single step matches the hand-evaluated update") {
  ParamSet params;
  params.add("w", Tensor::from_data({1}, {1.0}, true));
  Tensor& w = params.at("w");
  w.node()->ensure_grad();
  w.node()->grad[0] = 1.0;

  OptimState state;
  AdamWConfig cfg;  // beta1 0.9, beta2 0.999, eps 1e-8, decay 1e-2
  adamw_step(params, state, 0.1, cfg);

  // hand evaluation of the decoupled update
  double p = 1.0;
  p *= 1.0 - 0.1 * 0.01;
  const double m = 0.1 * 1.0;          // (1-beta1)*g
  const double v = 0.001 * 1.0;        // (1-beta2)*g^2
  const double mhat = m / (1.0 - 0.9);
  const double vhat = v / (1.0 - 0.999);
  p -= 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
  CHECK(params.at("w").data()[0] == doctest::Approx(p).epsilon(1e-12));
  CHECK(state.step == 1);
}

TEST_CASE("optimizer step is bit-reproducible") {
  auto run = [] {
    Rng rng(77);
    ParamSet params;
    params.add("w", testutil::random_tensor({4, 4}, rng, true));
    backward(sum_all(mul(params.at("w"), params.at("w"))));
    clear_tape();
    OptimState state;
    adamw_step(params, state, 1e-3, AdamWConfig{});
    return params.at("w").data();
  };
  CHECK(run() == run());
}

TEST_CASE("learning-rate schedule endpoints and linearity") {
  LrSchedule sched;
  sched.peak = 1e-3;
  sched.warmup = 500;
  sched.total = 20000;
  CHECK(sched.at(0) == 0.0);
  CHECK(sched.at(500) == doctest::Approx(1e-3).epsilon(1e-15));
  CHECK(sched.at(20000) == 0.0);
  CHECK(sched.at(250) == doctest::Approx(0.5e-3).epsilon(1e-12));
  CHECK(sched.at(10250) == doctest::Approx(1e-3 * (20000 - 10250) / 19500.0).epsilon(1e-12));
  CHECK(sched.at(30000) == 0.0);
  CHECK_THROWS_AS(sched.at(-1), ContractError);
}

TEST_CASE("gradient clipping rescales to the requested norm") {
  ParamSet params;
  params.add("w", Tensor::from_data({2}, {3.0, 4.0}, true));
  Tensor& w = params.at("w");
  w.node()->ensure_grad();
  w.node()->grad = {30.0, 40.0};
  const double norm = clip_gradients(params, 5.0);
  CHECK(norm == doctest::Approx(50.0).epsilon(1e-12));
  CHECK(w.grad()[0] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(w.grad()[1] == doctest::Approx(4.0).epsilon(1e-12));
}

namespace {

std::string make_tiny_dataset(const std::string& tag, int count) {
  const std::string dir = testutil::temp_dir(tag);
  SceneRecipe recipe;
  recipe.count = count;
  recipe.channels = 2;
  recipe.source_frames = 50;
  recipe.seed = 11;
  dataset_generate(recipe, dir);
  return dir + "/manifest.jsonl";
}

ModelConfig smoke_model_config() {
  ModelConfig cfg;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.d_model = 16;
  cfg.ffn_dim = 32;
  cfg.max_len = 64;
  cfg.bins = 129;
  cfg.streams = 3;
  cfg.channels = 2;
  return cfg;
}

}  // namespace

TEST_CASE("one smoke epoch trains to a finite loss and writes artifacts") {
  const std::string manifest = make_tiny_dataset("train_smoke", 4);
  const std::string out = testutil::temp_dir("train_smoke_out");

  SeparatorModel model(smoke_model_config());
  model.init(3);
  TrainConfig cfg;
  cfg.steps = 4;
  cfg.batch = 2;
  cfg.crop_frames = 40;
  cfg.schedule = {1e-3, 2, 4};
  cfg.seed = 3;
  cfg.log_csv = out + "/log.csv";
  cfg.ckpt_best = out + "/best.exsp";
  cfg.ckpt_last = out + "/last.exsp";
  const TrainResult result = train(manifest, model, cfg);
  CHECK(!result.aborted_nan);
  CHECK(result.steps_done == 4);
  CHECK(std::isfinite(result.final_val_mse));
  CHECK(result.final_val_mse > 0.0);
  CHECK(result.baseline_const_mse > 0.0);
  CHECK(std::filesystem::exists(out + "/best.exsp"));
  CHECK(std::filesystem::exists(out + "/last.exsp"));

  std::ifstream log(out + "/log.csv");
  std::string header;
  std::getline(log, header);
  CHECK(header == "step,lr,L1,L2,weighted");

  // resume continues the step count
  SeparatorModel resumed(smoke_model_config());
  resumed.init(3);
  TrainConfig cfg2 = cfg;
  cfg2.steps = 6;
  cfg2.resume_from = out + "/last.exsp";
  const TrainResult r2 = train(manifest, resumed, cfg2);
  CHECK(r2.steps_done == 6);
}

TEST_CASE("training is reproducible for a fixed seed") {
  const std::string manifest = make_tiny_dataset("train_repro", 3);
  auto run = [&] {
    SeparatorModel model(smoke_model_config());
    model.init(5);
    TrainConfig cfg;
    cfg.steps = 2;
    cfg.batch = 2;
    cfg.crop_frames = 30;
    cfg.schedule = {1e-3, 1, 2};
    cfg.seed = 5;
    train(manifest, model, cfg);
    return model.params().at("layer1.wq").data();
  };
  CHECK(run() == run());
}

TEST_CASE("a diverging run aborts on non-finite loss and keeps the checkpoint") {
  const std::string manifest = make_tiny_dataset("train_nan", 3);
  const std::string out = testutil::temp_dir("train_nan_out");
  SeparatorModel model(smoke_model_config());
  model.init(7);
  TrainConfig cfg;
  cfg.steps = 60;
  cfg.batch = 2;
  cfg.crop_frames = 30;
  cfg.schedule.peak = 1e28;  // guaranteed blow-up
  cfg.schedule.warmup = 1;
  cfg.schedule.total = 60;
  cfg.clip_norm = 0.0;  // disable clipping so the blow-up is immediate
  cfg.seed = 7;
  cfg.val_interval = 1;
  cfg.ckpt_best = out + "/best.exsp";
  const TrainResult result = train(manifest, model, cfg);
  CHECK(result.aborted_nan);
  CHECK(result.steps_done < 60);
}

TEST_CASE("chunk_loss reports one pit pairing per layer") {
  const std::string manifest = make_tiny_dataset("chunk_loss", 2);
  const auto entries = read_manifest(manifest);
  AudioScene scene = load_scene(entries[0].path);
  ModelConfig mc = smoke_model_config();
  SeparatorModel model(mc);
  model.init(9);

  std::vector<Spectrogram> specs;
  for (int c = 0; c < mc.channels; ++c)
    specs.push_back(stft(scene.mixture[static_cast<size_t>(c)], mc.n_fft, mc.hop, 16000));
  FeatureGrid grid = assemble_features(specs, 0, std::min(40, specs[0].frames));
  MaskStack ideal = ideal_masks(scene, mc.n_fft, mc.hop);
  MaskStack ref(grid.frames, mc.bins, mc.streams);
  for (int t = 0; t < grid.frames; ++t)
    for (int s = 0; s < 3; ++s)
      for (int f = 0; f < mc.bins; ++f) ref.at(t, f, s) = ideal.at(t, f, s);

  ChunkLoss loss = chunk_loss(model, grid, ref);
  CHECK(loss.per_layer.size() == 2);
  CHECK(loss.perms.size() == 2);
  const double expect = weighted_loss_value({loss.per_layer[0].item(), loss.per_layer[1].item()});
  CHECK(loss.weighted.item() == doctest::Approx(expect).epsilon(1e-15));
  clear_tape();
}
