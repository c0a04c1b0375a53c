// Copyright 2026 exsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "exsep/gradcheck.hpp"
#include "exsep/model.hpp"
#include "test_util.hpp"

using namespace exsep;

namespace {

ModelConfig tiny_config(int layers = 2, int t_max = 16) {
  ModelConfig cfg;
  cfg.layers = layers;
  cfg.heads = 2;
  cfg.d_model = 8;
  cfg.ffn_dim = 12;
  cfg.max_len = t_max;
  cfg.bins = 5;
  cfg.streams = 3;
  cfg.channels = 2;
  return cfg;
}

FeatureGrid random_features(const ModelConfig& cfg, int frames, uint64_t seed) {
  Rng rng(seed);
  FeatureGrid grid;
  grid.frames = frames;
  grid.dims = cfg.input_dim();
  grid.v = testutil::random_vec(static_cast<size_t>(frames) * grid.dims, rng);
  return grid;
}

// Plain scaled dot-product attention computed with naive loops straight from
// the parameter data. Used as the oracle when the position table is zeroed.
std::vector<double> plain_attention_reference(const SeparatorModel& model,
                                              const std::vector<double>& h,
                                              int t, int layer) {
  const ModelConfig& cfg = model.config();
  const int d = cfg.d_model;
  const int dk = cfg.d_k();
  const std::string key = "layer" + std::to_string(layer) + ".";
  const ParamSet& p = model.params();

  auto affine = [&](const char* w, const char* b) {
    const auto& wd = p.at(key + w).data();
    const double* bd = b ? p.at(key + b).data().data() : nullptr;
    std::vector<double> out(static_cast<size_t>(t) * d);
    for (int i = 0; i < t; ++i)
      for (int j = 0; j < d; ++j) {
        double acc = bd ? bd[static_cast<size_t>(j)] : 0.0;
        for (int k = 0; k < d; ++k)
          acc += h[static_cast<size_t>(i) * d + k] * wd[static_cast<size_t>(k) * d + j];
        out[static_cast<size_t>(i) * d + j] = acc;
      }
    return out;
  };
  const auto q = affine("wq", "bq");
  const auto k = affine("wk", nullptr);
  const auto v = affine("wv", "bv");

  std::vector<double> ctx(static_cast<size_t>(t) * d, 0.0);
  for (int head = 0; head < cfg.heads; ++head) {
    const int at = head * dk;
    for (int m = 0; m < t; ++m) {
      std::vector<double> scores(static_cast<size_t>(t));
      double mx = -1e300;
      for (int n = 0; n < t; ++n) {
        double acc = 0.0;
        for (int x = 0; x < dk; ++x)
          acc += q[static_cast<size_t>(m) * d + at + x] * k[static_cast<size_t>(n) * d + at + x];
        scores[static_cast<size_t>(n)] = acc / std::sqrt(static_cast<double>(dk));
        mx = std::max(mx, scores[static_cast<size_t>(n)]);
      }
      double denom = 0.0;
      for (int n = 0; n < t; ++n) {
        scores[static_cast<size_t>(n)] = std::exp(scores[static_cast<size_t>(n)] - mx);
        denom += scores[static_cast<size_t>(n)];
      }
      double weight_sum = 0.0;
      for (int n = 0; n < t; ++n) {
        const double w = scores[static_cast<size_t>(n)] / denom;
        weight_sum += w;
        for (int x = 0; x < dk; ++x)
          ctx[static_cast<size_t>(m) * d + at + x] += w * v[static_cast<size_t>(n) * d + at + x];
      }
      CHECK(std::fabs(weight_sum - 1.0) < 1e-12);
    }
  }

  const auto& wo = p.at(key + "wo").data();
  const auto& bo = p.at(key + "bo").data();
  std::vector<double> out(static_cast<size_t>(t) * d);
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < d; ++j) {
      double acc = bo[static_cast<size_t>(j)];
      for (int x = 0; x < d; ++x)
        acc += ctx[static_cast<size_t>(i) * d + x] * wo[static_cast<size_t>(x) * d + j];
      out[static_cast<size_t>(i) * d + j] = acc;
    }
  return out;
}

}  // namespace

TEST_CASE("input projection shape and zero propagation") {
  SeparatorModel model(tiny_config());
  model.init(5);
  FeatureGrid one = random_features(model.config(), 1, 1);
  NoGradGuard ng;
  Tensor h = model.input_proj(one);
  CHECK(h.shape() == std::vector<int>{1, 8});

  FeatureGrid zero;
  zero.frames = 3;
  zero.dims = model.config().input_dim();
  zero.v.assign(static_cast<size_t>(3) * zero.dims, 0.0);
  Tensor h0 = model.input_proj(zero);
  for (double v : h0.data()) CHECK(v == 0.0);  // biases start at zero

  FeatureGrid bad = zero;
  bad.dims = 4;
  bad.v.resize(12);
  CHECK_THROWS_AS(model.input_proj(bad), ContractError);
}

TEST_CASE("attention with a zeroed position table equals plain attention") {
  SeparatorModel model(tiny_config());
  model.init(7);
  for (double& v : model.params().at("relpos.table").leaf_data()) v = 0.0;

  const int t = 8;
  Rng rng(3);
  std::vector<double> h_data = testutil::random_vec(static_cast<size_t>(t) * 8, rng);
  NoGradGuard ng;
  Tensor h = Tensor::from_data({t, 8}, h_data);
  Tensor got = model.attention(h, 1);
  const auto expect = plain_attention_reference(model, h_data, t, 1);
  for (size_t i = 0; i < expect.size(); ++i)
    CHECK(std::fabs(got.data()[i] - expect[i]) < 1e-12);
}

TEST_CASE("attention of a single frame reduces to the value path") {
  SeparatorModel model(tiny_config());
  model.init(9);
  for (double& v : model.params().at("relpos.table").leaf_data()) v = 0.0;
  Rng rng(4);
  std::vector<double> h_data = testutil::random_vec(8, rng);
  NoGradGuard ng;
  Tensor got = model.attention(Tensor::from_data({1, 8}, h_data), 1);
  const auto expect = plain_attention_reference(model, h_data, 1, 1);
  for (size_t i = 0; i < expect.size(); ++i)
    CHECK(std::fabs(got.data()[i] - expect[i]) < 1e-12);
}

TEST_CASE("encoder layer keeps shapes and is chunk-length bounded") {
  SeparatorModel model(tiny_config(2, 50));
  model.init(11);
  NoGradGuard ng;
  for (int t : {1, 7, 50}) {
    Rng rng(static_cast<uint64_t>(t));
    Tensor h = testutil::random_tensor({t, 8}, rng);
    Tensor out = model.encoder_layer(h, 1);
    CHECK(out.shape() == std::vector<int>{t, 8});
  }
  Rng rng(5);
  Tensor too_long = testutil::random_tensor({51, 8}, rng);
  CHECK_THROWS_AS(model.encoder_layer(too_long, 1), ContractError);
}

TEST_CASE("identical rows stay identical when the position table is zero") {
  SeparatorModel model(tiny_config());
  model.init(13);
  for (double& v : model.params().at("relpos.table").leaf_data()) v = 0.0;
  Rng rng(6);
  std::vector<double> row = testutil::random_vec(8, rng);
  std::vector<double> two_rows;
  two_rows.insert(two_rows.end(), row.begin(), row.end());
  two_rows.insert(two_rows.end(), row.begin(), row.end());
  NoGradGuard ng;
  Tensor out = model.encoder_layer(Tensor::from_data({2, 8}, two_rows), 1);
  for (int j = 0; j < 8; ++j)
    CHECK(out.data()[static_cast<size_t>(j)] ==
          doctest::Approx(out.data()[static_cast<size_t>(8 + j)]).epsilon(1e-12));
}

TEST_CASE("mask estimator: sigmoid range, 0.5 at zero logits, shapes") {
  ModelConfig cfg = tiny_config();
  cfg.bins = 129;
  cfg.streams = 3;
  SeparatorModel model(cfg);
  model.init(15);
  NoGradGuard ng;
  Rng rng(8);
  Tensor h = testutil::random_tensor({4, 8}, rng);
  Tensor m = model.estimate_masks(h, 1);
  CHECK(m.shape() == std::vector<int>{4, 129 * 3});
  for (double v : m.data()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  MaskStack stack = to_mask_stack(m, 129, 3);
  CHECK(stack.frames == 4);
  CHECK(stack.bins == 129);
  CHECK(stack.streams == 3);
  CHECK(stack.at(2, 7, 1) == m.data()[static_cast<size_t>(2) * 387 + 129 + 7]);

  for (double& v : model.params().at("layer1.est.w").leaf_data()) v = 0.0;
  Tensor half = model.estimate_masks(h, 1);
  for (double v : half.data()) CHECK(v == 0.5);

  CHECK_THROWS_AS(model.estimate_masks(h, 3), ContractError);
}

TEST_CASE("forward_all emits one mask stack per layer, deterministically") {
  SeparatorModel model(tiny_config(2));
  model.init(17);
  FeatureGrid grid = random_features(model.config(), 6, 2);
  NoGradGuard ng;
  LayerActivation a = model.forward_all(grid);
  LayerActivation b = model.forward_all(grid);
  CHECK(a.masks.size() == 2);
  CHECK(a.hidden.size() == 2);
  CHECK(a.exit_layer == 2);
  for (size_t i = 0; i < a.masks.size(); ++i)
    CHECK(a.masks[i].data() == b.masks[i].data());
}

TEST_CASE("run with a stop callback truncates exactly where forward_all would be") {
  SeparatorModel model(tiny_config(4));
  model.init(19);
  FeatureGrid grid = random_features(model.config(), 5, 3);
  NoGradGuard ng;
  LayerActivation full = model.forward_all(grid);
  for (int e = 1; e <= 4; ++e) {
    LayerActivation cut = model.run(grid, [e](int layer, const Tensor&) {
      return layer >= e;
    });
    CHECK(cut.exit_layer == e);
    CHECK(cut.masks.size() == static_cast<size_t>(e));
    // bit-exact truncation consistency
    CHECK(cut.masks.back().data() == full.masks[static_cast<size_t>(e - 1)].data());
    CHECK(cut.hidden.back().data() == full.hidden[static_cast<size_t>(e - 1)].data());
  }
}

TEST_CASE("full-model gradients pass the finite-difference oracle") {
  ModelConfig cfg = tiny_config(2, 8);
  SeparatorModel model(cfg);
  model.init(23);
  FeatureGrid grid = random_features(cfg, 5, 4);
  Rng rng(9);
  Tensor target = testutil::random_tensor({5, cfg.bins * cfg.streams}, rng, false, 0.3);

  auto loss = [&] {
    LayerActivation act = model.forward_all(grid);
    Tensor acc = sum_sq_diff(act.masks[0], target);
    return add(acc, sum_sq_diff(act.masks[1], target));
  };
  GradCheckOptions opts;
  opts.max_coords_per_param = 6;
  opts.sample_seed = 101;
  const auto res = finite_diff_check(model.params(), loss, opts);
  INFO("worst param ", res.worst_param, " idx ", res.worst_index);
  CHECK(res.max_rel_error <= 1e-4);
}

TEST_CASE("encoder-layer-only gradient check") {
  ModelConfig cfg = tiny_config(1, 8);
  SeparatorModel model(cfg);
  model.init(29);
  Rng rng(10);
  FeatureGrid grid = random_features(cfg, 4, 5);
  Tensor target = testutil::random_tensor({4, cfg.d_model}, rng);
  auto loss = [&] {
    Tensor h = model.input_proj(grid);
    return sum_sq_diff(model.encoder_layer(h, 1), target);
  };
  GradCheckOptions opts;
  opts.max_coords_per_param = 8;
  opts.sample_seed = 77;
  const auto res = finite_diff_check(model.params(), loss, opts);
  CHECK(res.max_rel_error <= 1e-4);
}

TEST_CASE("model checkpoint round trip reproduces the masks bit for bit") {
  ModelConfig cfg = tiny_config(2);
  SeparatorModel model(cfg);
  model.init(31);
  const std::string dir = testutil::temp_dir("model_ckpt");
  model.save(dir + "/m.exsp");
  SeparatorModel loaded = SeparatorModel::load(dir + "/m.exsp");
  CHECK(loaded.config().layers == cfg.layers);
  CHECK(loaded.config().d_model == cfg.d_model);

  FeatureGrid grid = random_features(cfg, 6, 6);
  NoGradGuard ng;
  LayerActivation a = model.forward_all(grid);
  LayerActivation b = loaded.forward_all(grid);
  for (size_t i = 0; i < a.masks.size(); ++i)
    CHECK(a.masks[i].data() == b.masks[i].data());
}

TEST_CASE("config validation rejects impossible dimensions") {
  ModelConfig bad = tiny_config();
  bad.d_model = 9;  // not divisible by heads=2
  CHECK_THROWS_AS((void)SeparatorModel(bad), ContractError);
  bad = tiny_config();
  bad.layers = 0;
  CHECK_THROWS_AS((void)SeparatorModel(bad), ContractError);
}
