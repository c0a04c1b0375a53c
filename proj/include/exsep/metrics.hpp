// Copyright 2026 exsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

// Separation metrics, exit-layer statistics per overlap bucket, and the
// single-threaded speedup benchmark with CSV/plot report output.

#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "exsep/infer.hpp"
#include "exsep/mask.hpp"
#include "exsep/scene.hpp"

namespace exsep {

// Mean squared error over all entries; with permutation_free the speaker
// streams are paired to minimize it (noise fixed).
double mask_mse(const MaskStack& pred, const MaskStack& ref,
                bool permutation_free);

// Scale-invariant SNR in dB: estimate projected onto the reference, energy
// ratio of projection to residual, clamped to +-60 dB.
double si_snr(std::span<const double> estimate, std::span<const double> reference);

// Mean over speakers of si_snr(separated, reference) - si_snr(mixture ch 1,
// reference), with the speaker assignment that maximizes it.
double si_snr_improvement(const std::vector<std::vector<double>>& est_streams,
                          const AudioScene& scene);

struct ExitBucket {
  double overlap = 0.0;
  long count = 0;
  double mean_exit = 0.0;
  std::map<int, long> hist;  // exit layer -> count
};

// Joins traces to manifest entries by chunk id prefix ("<path>#<index>").
// Unmatched ids raise a DataError naming them.
std::vector<ExitBucket> exit_stats(const std::vector<ExitTrace>& traces,
                                   const std::vector<ManifestEntry>& manifest);

// One untimed pass of the whole testset at a fixed policy.
struct TestsetEval {
  std::vector<ExitTrace> traces;
  std::vector<ExitBucket> buckets;
  double avg_exit_layer = 0.0;
  long chunks = 0;
  std::map<double, double> bucket_mse;     // overlap -> mean masked MSE
  std::map<double, double> bucket_sisnri;  // overlap -> mean SI-SNR gain (dB)
};

TestsetEval eval_testset(const SeparatorModel& model,
                         const std::string& manifest_path,
                         const ExitPolicy& policy, const CssConfig& css,
                         bool with_quality);

struct BenchRow {
  double tau = 0.0;
  double avg_exit_layer = 0.0;
  double speedup = 1.0;
  double median_seconds = 0.0;
  std::vector<ExitBucket> exit_buckets;
  std::map<double, double> bucket_mse;
  std::map<double, double> bucket_sisnri;
};

struct BenchReport {
  std::vector<double> buckets;
  std::vector<BenchRow> rows;
  int model_layers = 0;
};

struct BenchOptions {
  std::vector<double> taus = {0.0, 1e-4, 1e-3, 1e-2,
                              std::numeric_limits<double>::infinity()};
  int reps = 3;
  int max_timing_chunks = 100;  // 0 = every chunk
  bool with_quality = true;
  CssConfig css;
  int min_layer = 2;
  bool include_noise = true;
};

// For each threshold: exit statistics over the full testset plus a
// single-threaded timing of the encoder passes (feature extraction excluded,
// median of `reps` runs). Speedup is measured against the tau=0 run.
BenchReport speedup_bench(const SeparatorModel& model,
                          const std::string& manifest_path,
                          const BenchOptions& opts);

// sweep.csv, exit_by_overlap.csv and PNG plots under out_dir.
void emit_report(const BenchReport& report, const std::string& out_dir);
BenchReport load_report(const std::string& dir);

}  // namespace exsep
