// Copyright 2026 exsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

// Experiment configuration: dataset recipe, model dimensions, training
// schedule, threshold sweep, and output paths, all in one JSON file so a
// config plus the binary determines every artifact.

#include <string>
#include <vector>

#include "exsep/infer.hpp"
#include "exsep/model.hpp"
#include "exsep/scene.hpp"
#include "exsep/train.hpp"

namespace exsep {

struct ExperimentConfig {
  uint64_t seed = 7;
  SceneRecipe dataset;
  ModelConfig model;
  TrainConfig training;
  std::vector<double> taus = {0.0, 1e-4, 1e-3, 1e-2,
                              std::numeric_limits<double>::infinity()};
  int exit_min_layer = 2;
  bool exit_include_noise = true;
  CssConfig css;
  int bench_reps = 3;
  int bench_timing_chunks = 100;
  bool bench_quality = true;
  std::string dataset_dir = "data/train";
  std::string testset_dir = "data/test";
  int testset_count = 50;
  std::string checkpoint = "out/model.exsp";
  std::string checkpoint_last = "out/last.exsp";
  std::string train_log = "out/train_log.csv";
  std::string report_dir = "out/report";

  static ExperimentConfig defaults();
  static ExperimentConfig load(const std::string& path);
  std::string to_json() const;
};

// "inf" (any case) parses to infinity; plain numbers otherwise.
double parse_tau(const std::string& text);
std::vector<double> parse_tau_list(const std::string& text);

}  // namespace exsep
