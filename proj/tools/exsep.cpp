// Copyright 2026 exsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Command-line front end: synth, train, separate, bench, sweep.
// Exit codes: 0 success, 1 usage, 2 data/contract error, 3 numeric failure.

#include <cstdio>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "exsep/checkpoint.hpp"
#include "exsep/config.hpp"
#include "exsep/infer.hpp"
#include "exsep/kernels.hpp"
#include "exsep/metrics.hpp"
#include "exsep/model.hpp"
#include "exsep/scene.hpp"
#include "exsep/train.hpp"
#include "exsep/wav.hpp"

namespace fs = std::filesystem;
using namespace exsep;

namespace {

struct CommonArgs {
  std::string config_path;
  uint64_t seed = 0;
  bool seed_set = false;
  int threads = 0;
};

ExperimentConfig load_or_default(const CommonArgs& args) {
  ExperimentConfig cfg = args.config_path.empty()
                             ? ExperimentConfig::defaults()
                             : ExperimentConfig::load(args.config_path);
  if (args.seed_set) {
    cfg.seed = args.seed;
    cfg.dataset.seed = args.seed;
    cfg.training.seed = args.seed;
  }
  return cfg;
}

void apply_threads(int threads) {
  if (threads == 1)
    kernels::set_parallel(false);
  else
    kernels::set_parallel(true);
}

std::string format_tau(double tau) {
  if (std::isinf(tau)) return "inf";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", tau);
  return buf;
}

int cmd_synth(const ExperimentConfig& cfg, const std::string& out_dir,
              int count) {
  SceneRecipe recipe = cfg.dataset;
  recipe.count = count >= 0 ? count : cfg.dataset.count;
  const auto entries = dataset_generate(recipe, out_dir);
  std::cout << "wrote " << entries.size() << " scenes under " << out_dir
            << " (manifest.jsonl)\n";
  return 0;
}

int cmd_train(ExperimentConfig cfg, const std::string& manifest) {
  SeparatorModel model(cfg.model);
  model.init(cfg.seed);
  for (const std::string& p :
       {cfg.checkpoint, cfg.checkpoint_last, cfg.train_log})
    if (!p.empty() && !fs::path(p).parent_path().empty())
      fs::create_directories(fs::path(p).parent_path());

  cfg.training.ckpt_best = cfg.checkpoint;
  cfg.training.ckpt_last = cfg.checkpoint_last;
  cfg.training.log_csv = cfg.train_log;
  const TrainResult result = train(manifest, model, cfg.training);
  if (result.aborted_nan) {
    std::cerr << "training aborted on non-finite loss at step "
              << result.steps_done << "; last good checkpoint kept\n";
    return 3;
  }
  std::cout << "trained " << result.steps_done << " steps\n"
            << "epoch-1 val mse  " << result.epoch1_val_mse << "\n"
            << "best val mse     " << result.best_val_mse << "\n"
            << "final val mse    " << result.final_val_mse << "\n"
            << "const-0.5 mse    " << result.baseline_const_mse << "\n"
            << "checkpoint       " << result.best_checkpoint << "\n";
  return 0;
}

int cmd_separate(const std::string& ckpt, const std::string& input,
                 double tau, int min_layer, bool speakers_only,
                 const CssConfig& css, const std::string& out_dir) {
  SeparatorModel model = SeparatorModel::load(ckpt);
  Audio audio = read_audio(input);
  fs::create_directories(out_dir);
  ExitPolicy policy{tau, min_layer, !speakers_only};
  const SeparationResult result =
      separate(model, audio.channels, audio.sample_rate, policy, css,
               fs::path(input).filename().string());
  for (size_t s = 0; s < result.streams.size(); ++s) {
    Audio out;
    out.sample_rate = audio.sample_rate;
    out.channels = {result.streams[s]};
    const std::string name = s + 1 < result.streams.size()
                                 ? "speaker" + std::to_string(s + 1)
                                 : "noise";
    write_wav((fs::path(out_dir) / (name + ".wav")).string(), out, 32);
  }
  write_traces((fs::path(out_dir) / "traces.jsonl").string(), result.traces);
  double mean_exit = 0.0;
  for (const ExitTrace& t : result.traces) mean_exit += t.exit_layer;
  mean_exit /= static_cast<double>(result.traces.size());
  std::cout << result.traces.size() << " chunks, mean exit layer " << mean_exit
            << ", tau " << format_tau(tau) << "\n"
            << "streams written under " << out_dir << "\n";
  return 0;
}

int cmd_bench(const ExperimentConfig& cfg, const std::string& ckpt,
              const std::string& manifest, const std::string& out_dir) {
  SeparatorModel model = SeparatorModel::load(ckpt);
  BenchOptions opts;
  opts.taus = cfg.taus;
  opts.reps = cfg.bench_reps;
  opts.max_timing_chunks = cfg.bench_timing_chunks;
  opts.with_quality = cfg.bench_quality;
  opts.css = cfg.css;
  // shrink the sliding window to whatever the checkpoint can attend over
  if (opts.css.window_frames > model.config().max_len) {
    opts.css.window_frames = model.config().max_len;
    opts.css.hop_frames = std::max(1, opts.css.window_frames / 2);
  }
  opts.min_layer = cfg.exit_min_layer;
  opts.include_noise = cfg.exit_include_noise;
  const BenchReport report = speedup_bench(model, manifest, opts);
  if (!out_dir.empty()) emit_report(report, out_dir);

  std::printf("%-10s %-14s %-9s %-9s\n", "tau", "avg_exit", "speedup", "sec");
  for (const BenchRow& row : report.rows)
    std::printf("%-10s %-14.3f %-9.2f %-9.3f\n", format_tau(row.tau).c_str(),
                row.avg_exit_layer, row.speedup, row.median_seconds);
  if (!out_dir.empty()) std::cout << "report written to " << out_dir << "\n";
  return 0;
}

int cmd_sweep(ExperimentConfig cfg) {
  const std::string train_manifest =
      (fs::path(cfg.dataset_dir) / "manifest.jsonl").string();
  if (!fs::exists(train_manifest)) {
    std::cout << "synthesizing training set...\n";
    dataset_generate(cfg.dataset, cfg.dataset_dir);
  }
  const std::string test_manifest =
      (fs::path(cfg.testset_dir) / "manifest.jsonl").string();
  if (!fs::exists(test_manifest)) {
    std::cout << "synthesizing test set...\n";
    SceneRecipe test_recipe = cfg.dataset;
    test_recipe.count = cfg.testset_count;
    test_recipe.seed = cfg.dataset.seed + 1000003;
    dataset_generate(test_recipe, cfg.testset_dir);
  }
  if (!fs::exists(cfg.checkpoint)) {
    std::cout << "training...\n";
    const int rc = cmd_train(cfg, train_manifest);
    if (rc != 0) return rc;
  }
  return cmd_bench(cfg, cfg.checkpoint, test_manifest, cfg.report_dir);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adaptive-depth transformer separation experiments"};
  app.require_subcommand(1);
  app.fallthrough();

  CommonArgs common;
  app.add_option("--config", common.config_path, "experiment config JSON");
  app.add_option("--seed", common.seed, "global seed override")
      ->each([&](const std::string&) { common.seed_set = true; });
  app.add_option("--threads", common.threads,
                 "1 forces the serial kernels; 0 keeps OpenMP");

  auto* synth = app.add_subcommand("synth", "generate a scene dataset");
  std::string synth_out = "data/train";
  int synth_count = -1;
  std::string synth_overlaps;
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--count", synth_count, "number of scenes");
  synth->add_option("--overlaps", synth_overlaps, "comma list of overlap ratios");

  auto* train_cmd = app.add_subcommand("train", "train a separator");
  std::string train_manifest;
  std::string train_ckpt, train_resume;
  long train_steps = -1;
  train_cmd->add_option("--manifest", train_manifest, "dataset manifest path");
  train_cmd->add_option("--ckpt", train_ckpt, "checkpoint output path");
  train_cmd->add_option("--steps", train_steps, "optimizer steps");
  train_cmd->add_option("--resume", train_resume, "resume from train state");

  auto* sep = app.add_subcommand("separate", "separate one recording");
  std::string sep_ckpt, sep_input, sep_out = "out/separated", sep_tau = "0";
  int sep_min_layer = 2, sep_window = 0, sep_hop = 0;
  bool sep_speakers_only = false;
  sep->add_option("--ckpt", sep_ckpt, "model checkpoint")->required();
  sep->add_option("--input", sep_input, "wav or raw f64 recording")->required();
  sep->add_option("--tau", sep_tau, "exit threshold (number or 'inf')");
  sep->add_option("--out", sep_out, "output directory");
  sep->add_option("--window", sep_window, "window length in frames");
  sep->add_option("--hop", sep_hop, "window hop in frames");
  sep->add_option("--min-layer", sep_min_layer, "first checkable layer");
  sep->add_flag("--speakers-only", sep_speakers_only,
                "exclude the noise stream from the exit distance");

  auto* bench = app.add_subcommand("bench", "threshold sweep benchmark");
  std::string bench_ckpt, bench_manifest, bench_out, bench_taus;
  int bench_reps = -1, bench_chunks = -1;
  bool bench_no_quality = false;
  bench->add_option("--ckpt", bench_ckpt, "model checkpoint")->required();
  bench->add_option("--manifest", bench_manifest, "testset manifest")->required();
  bench->add_option("--out", bench_out, "report directory");
  bench->add_option("--taus", bench_taus, "comma list of thresholds");
  bench->add_option("--reps", bench_reps, "timing repetitions");
  bench->add_option("--timing-chunks", bench_chunks, "chunks in the timed subset");
  bench->add_flag("--no-quality", bench_no_quality, "skip mask MSE / SI-SNR");

  auto* sweep = app.add_subcommand("sweep", "synth + train + bench end to end");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    apply_threads(common.threads);
    ExperimentConfig cfg = load_or_default(common);

    if (synth->parsed()) {
      if (!synth_overlaps.empty()) {
        std::stringstream ss(synth_overlaps);
        std::string item;
        cfg.dataset.overlap_choices.clear();
        while (std::getline(ss, item, ','))
          cfg.dataset.overlap_choices.push_back(std::stod(item));
      }
      return cmd_synth(cfg, synth_out, synth_count);
    }
    if (train_cmd->parsed()) {
      if (train_steps >= 0) {
        cfg.training.steps = train_steps;
        cfg.training.schedule.total = std::max(cfg.training.schedule.total, train_steps);
      }
      if (!train_ckpt.empty()) cfg.checkpoint = train_ckpt;
      if (!train_resume.empty()) cfg.training.resume_from = train_resume;
      const std::string manifest =
          train_manifest.empty()
              ? (fs::path(cfg.dataset_dir) / "manifest.jsonl").string()
              : train_manifest;
      return cmd_train(cfg, manifest);
    }
    if (sep->parsed()) {
      CssConfig css = cfg.css;
      if (sep_window > 0) css.window_frames = sep_window;
      if (sep_hop > 0) css.hop_frames = sep_hop;
      return cmd_separate(sep_ckpt, sep_input, parse_tau(sep_tau),
                          sep_min_layer, sep_speakers_only, css, sep_out);
    }
    if (bench->parsed()) {
      if (!bench_taus.empty()) cfg.taus = parse_tau_list(bench_taus);
      if (bench_reps > 0) cfg.bench_reps = bench_reps;
      if (bench_chunks >= 0) cfg.bench_timing_chunks = bench_chunks;
      if (bench_no_quality) cfg.bench_quality = false;
      return cmd_bench(cfg, bench_ckpt, bench_manifest, bench_out);
    }
    if (sweep->parsed()) return cmd_sweep(cfg);
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
