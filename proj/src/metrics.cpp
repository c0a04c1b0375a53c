// Copyright 2026 exsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "exsep/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "exsep/kernels.hpp"
#include "exsep/png.hpp"

namespace exsep {

namespace fs = std::filesystem;

double mask_mse(const MaskStack& pred, const MaskStack& ref,
                bool permutation_free) {
  if (!pred.same_shape(ref))
    throw ContractError("mask_mse: mask stack shapes disagree");
  const long count = static_cast<long>(pred.v.size());
  if (!permutation_free) {
    double acc = 0.0;
    for (size_t i = 0; i < pred.v.size(); ++i) {
      const double d = pred.v[i] - ref.v[i];
      acc += d * d;
    }
    return acc / static_cast<double>(count);
  }

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
  std::vector<int> perm(static_cast<size_t>(n_spk));
  std::iota(perm.begin(), perm.end(), 0);
  double best = 0.0;
  bool first = true;
  do {
    double acc = noise_cost;
    for (int r = 0; r < n_spk; ++r)
      acc += cost[static_cast<size_t>(perm[static_cast<size_t>(r)])][static_cast<size_t>(r)];
    if (first || acc < best) {
      best = acc;
      first = false;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / static_cast<double>(count);
}

double si_snr(std::span<const double> estimate,
              std::span<const double> reference) {
  if (estimate.size() != reference.size())
    throw ContractError("si_snr: length mismatch");
  double ref_energy = 0.0, dot = 0.0;
  for (size_t i = 0; i < reference.size(); ++i) {
    ref_energy += reference[i] * reference[i];
    dot += estimate[i] * reference[i];
  }
  if (ref_energy == 0.0)
    throw ContractError("si_snr: undefined metric, reference is all zero");
  const double a = dot / ref_energy;
  const double proj_energy = a * dot;  // |a * ref|^2
  double residual = 0.0;
  for (size_t i = 0; i < reference.size(); ++i) {
    const double e = estimate[i] - a * reference[i];
    residual += e * e;
  }
  if (residual <= 0.0 || proj_energy / residual >= 1e6) return 60.0;
  const double val = 10.0 * std::log10(proj_energy / residual);
  return std::clamp(val, -60.0, 60.0);
}

double si_snr_improvement(const std::vector<std::vector<double>>& est_streams,
                          const AudioScene& scene) {
  const int n_spk = static_cast<int>(scene.references.size());
  if (static_cast<int>(est_streams.size()) < n_spk)
    throw ContractError("si_snr_improvement: fewer estimates than references");
  size_t len = scene.mixture[0].size();
  for (const auto& e : est_streams) len = std::min(len, e.size());

  std::vector<std::vector<double>> gain(static_cast<size_t>(n_spk),
                                        std::vector<double>(static_cast<size_t>(n_spk), 0.0));
  for (int p = 0; p < n_spk; ++p)
    for (int r = 0; r < n_spk; ++r)
      gain[static_cast<size_t>(p)][static_cast<size_t>(r)] =
          si_snr(std::span(est_streams[static_cast<size_t>(p)]).first(len),
                 std::span(scene.references[static_cast<size_t>(r)]).first(len));

  std::vector<int> perm(static_cast<size_t>(n_spk));
  std::iota(perm.begin(), perm.end(), 0);
  double best = -1e300;
  do {
    double acc = 0.0;
    for (int r = 0; r < n_spk; ++r)
      acc += gain[static_cast<size_t>(perm[static_cast<size_t>(r)])][static_cast<size_t>(r)];
    best = std::max(best, acc);
  } while (std::next_permutation(perm.begin(), perm.end()));

  double mix_total = 0.0;
  for (int r = 0; r < n_spk; ++r)
    mix_total += si_snr(std::span(scene.mixture[0]).first(len),
                        std::span(scene.references[static_cast<size_t>(r)]).first(len));
  return (best - mix_total) / n_spk;
}

std::vector<ExitBucket> exit_stats(const std::vector<ExitTrace>& traces,
                                   const std::vector<ManifestEntry>& manifest) {
  std::map<std::string, double> overlap_by_path;
  for (const ManifestEntry& e : manifest) overlap_by_path[e.path] = e.overlap;

  std::map<double, ExitBucket> buckets;
  std::vector<std::string> orphans;
  for (const ExitTrace& t : traces) {
    const size_t hash_pos = t.chunk_id.rfind('#');
    const std::string prefix = hash_pos == std::string::npos
                                   ? t.chunk_id
                                   : t.chunk_id.substr(0, hash_pos);
    auto it = overlap_by_path.find(prefix);
    if (it == overlap_by_path.end()) {
      orphans.push_back(t.chunk_id);
      continue;
    }
    ExitBucket& b = buckets[it->second];
    b.overlap = it->second;
    ++b.count;
    b.mean_exit += t.exit_layer;
    ++b.hist[t.exit_layer];
  }
  if (!orphans.empty()) {
    std::string msg = "exit_stats: traces with no manifest entry:";
    for (const std::string& id : orphans) msg += " " + id;
    throw DataError(msg);
  }
  std::vector<ExitBucket> out;
  for (auto& [overlap, b] : buckets) {
    b.mean_exit /= static_cast<double>(b.count);
    out.push_back(std::move(b));
  }
  return out;
}

TestsetEval eval_testset(const SeparatorModel& model,
                         const std::string& manifest_path,
                         const ExitPolicy& policy, const CssConfig& css,
                         bool with_quality) {
  const std::vector<ManifestEntry> entries = read_manifest(manifest_path);
  if (entries.empty()) throw ContractError("eval_testset: empty testset");
  const ModelConfig& cfg = model.config();

  TestsetEval eval;
  std::map<double, std::pair<double, long>> mse_acc;     // sum, count
  std::map<double, std::pair<double, long>> sisnri_acc;  // sum, count
  double exit_sum = 0.0;

  for (const ManifestEntry& entry : entries) {
    AudioScene scene = load_scene(entry.path);
    scene.spec.n_fft = cfg.n_fft;
    scene.spec.hop = cfg.hop;
    if (scene.spec.channels < cfg.channels)
      throw DataError("eval_testset: scene " + entry.path +
                      " has too few channels");
    std::vector<Spectrogram> specs;
    for (int c = 0; c < cfg.channels; ++c)
      specs.push_back(stft(scene.mixture[static_cast<size_t>(c)], cfg.n_fft,
                           cfg.hop, scene.spec.sample_rate));
    const MaskStack ideal = ideal_masks(scene, cfg.n_fft, cfg.hop);
    const int total = specs[0].frames;
    const auto windows = css_windows(total, css.window_frames, css.hop_frames);

    std::vector<MaskStack> masks;
    for (size_t i = 0; i < windows.size(); ++i) {
      const auto [s, e] = windows[i];
      FeatureGrid grid = assemble_features(specs, s, e);
      auto [mask, trace] = run_early_exit(
          model, grid, policy, entry.path + "#" + std::to_string(i));
      exit_sum += trace.exit_layer;
      ++eval.chunks;
      eval.traces.push_back(std::move(trace));

      MaskStack ref(e - s, ideal.bins, ideal.streams);
      for (int t = 0; t < e - s; ++t)
        for (int st = 0; st < ideal.streams; ++st)
          for (int f = 0; f < ideal.bins; ++f)
            ref.at(t, f, st) = ideal.at(s + t, f, st);
      auto& acc = mse_acc[entry.overlap];
      acc.first += mask_mse(mask, ref, true);
      acc.second += 1;
      masks.push_back(std::move(mask));
    }

    if (with_quality) {
      const MaskStack stitched = stitch_masks(masks, windows, total);
      std::vector<std::vector<double>> streams;
      for (int s = 0; s < cfg.streams; ++s)
        streams.push_back(reconstruct(stitched, s, specs[0]));
      auto& acc = sisnri_acc[entry.overlap];
      acc.first += si_snr_improvement(streams, scene);
      acc.second += 1;
    }
  }

  eval.avg_exit_layer = exit_sum / static_cast<double>(eval.chunks);
  eval.buckets = exit_stats(eval.traces, entries);
  for (const auto& [overlap, acc] : mse_acc)
    eval.bucket_mse[overlap] = acc.first / static_cast<double>(acc.second);
  for (const auto& [overlap, acc] : sisnri_acc)
    eval.bucket_sisnri[overlap] = acc.first / static_cast<double>(acc.second);
  return eval;
}

namespace {

double median3(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  return xs[xs.size() / 2];
}

}  // namespace

BenchReport speedup_bench(const SeparatorModel& model,
                          const std::string& manifest_path,
                          const BenchOptions& opts) {
  if (opts.taus.empty()) throw ContractError("speedup_bench: no thresholds");
  const ModelConfig& cfg = model.config();

  // untimed statistics per requested threshold
  std::vector<TestsetEval> evals;
  for (double tau : opts.taus) {
    ExitPolicy policy{tau, opts.min_layer, opts.include_noise};
    evals.push_back(eval_testset(model, manifest_path, policy, opts.css,
                                 opts.with_quality));
  }

  // timing chunk set: features precomputed so the timed loop is encoder-only
  const std::vector<ManifestEntry> entries = read_manifest(manifest_path);
  std::vector<FeatureGrid> timing_chunks;
  for (const ManifestEntry& entry : entries) {
    if (opts.max_timing_chunks > 0 &&
        static_cast<int>(timing_chunks.size()) >= opts.max_timing_chunks)
      break;
    AudioScene scene = load_scene(entry.path);
    std::vector<Spectrogram> specs;
    for (int c = 0; c < cfg.channels; ++c)
      specs.push_back(stft(scene.mixture[static_cast<size_t>(c)], cfg.n_fft,
                           cfg.hop, scene.spec.sample_rate));
    for (const auto& [s, e] :
         css_windows(specs[0].frames, opts.css.window_frames, opts.css.hop_frames)) {
      if (opts.max_timing_chunks > 0 &&
          static_cast<int>(timing_chunks.size()) >= opts.max_timing_chunks)
        break;
      timing_chunks.push_back(assemble_features(specs, s, e));
    }
  }
  if (timing_chunks.empty()) throw ContractError("speedup_bench: empty testset");

  // timing thresholds always include the full-depth baseline
  std::vector<double> timing_taus = opts.taus;
  if (std::find(timing_taus.begin(), timing_taus.end(), 0.0) == timing_taus.end())
    timing_taus.insert(timing_taus.begin(), 0.0);

  const bool was_parallel = kernels::parallel_enabled();
  kernels::set_parallel(false);
  // warmup
  {
    ExitPolicy policy{0.0, opts.min_layer, opts.include_noise};
    const size_t n = std::min<size_t>(3, timing_chunks.size());
    for (size_t i = 0; i < n; ++i) run_early_exit(model, timing_chunks[i], policy);
  }
  std::map<double, double> seconds_by_tau;
  for (double tau : timing_taus) {
    ExitPolicy policy{tau, opts.min_layer, opts.include_noise};
    std::vector<double> reps;
    for (int r = 0; r < std::max(1, opts.reps); ++r) {
      const int64_t t0 = wall_clock_ns();
      for (const FeatureGrid& grid : timing_chunks)
        run_early_exit(model, grid, policy);
      reps.push_back(static_cast<double>(wall_clock_ns() - t0) * 1e-9);
    }
    seconds_by_tau[tau] = median3(std::move(reps));
  }
  kernels::set_parallel(was_parallel);

  const double baseline = seconds_by_tau.at(0.0);
  BenchReport report;
  report.model_layers = cfg.layers;
  for (const ExitBucket& b : evals[0].buckets) report.buckets.push_back(b.overlap);
  for (size_t i = 0; i < opts.taus.size(); ++i) {
    BenchRow row;
    row.tau = opts.taus[i];
    row.avg_exit_layer = evals[i].avg_exit_layer;
    row.median_seconds = seconds_by_tau.at(opts.taus[i]);
    row.speedup = baseline / row.median_seconds;
    row.exit_buckets = evals[i].buckets;
    row.bucket_mse = evals[i].bucket_mse;
    row.bucket_sisnri = evals[i].bucket_sisnri;
    report.rows.push_back(std::move(row));
  }
  return report;
}

// --- report files -----------------------------------------------------------

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

int bucket_pct(double overlap) {
  return static_cast<int>(std::lround(overlap * 100.0));
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

}  // namespace

void emit_report(const BenchReport& report, const std::string& out_dir) {
  fs::create_directories(out_dir);

  {
    std::ofstream os(fs::path(out_dir) / "sweep.csv", std::ios::trunc);
    if (!os) throw DataError("emit_report: cannot write sweep.csv");
    os << "tau,avg_exit_layer,speedup,median_seconds";
    for (double b : report.buckets) {
      const int pct = bucket_pct(b);
      os << ",exit_" << pct << ",mse_" << pct << ",sisnri_" << pct;
    }
    os << "\n";
    for (const BenchRow& row : report.rows) {
      os << fmt(row.tau) << ',' << fmt(row.avg_exit_layer) << ','
         << fmt(row.speedup) << ',' << fmt(row.median_seconds);
      for (double b : report.buckets) {
        double exit_mean = std::numeric_limits<double>::quiet_NaN();
        for (const ExitBucket& eb : row.exit_buckets)
          if (eb.overlap == b) exit_mean = eb.mean_exit;
        const auto mit = row.bucket_mse.find(b);
        const auto sit = row.bucket_sisnri.find(b);
        os << ',' << fmt(exit_mean) << ','
           << fmt(mit == row.bucket_mse.end()
                      ? std::numeric_limits<double>::quiet_NaN()
                      : mit->second)
           << ','
           << fmt(sit == row.bucket_sisnri.end()
                      ? std::numeric_limits<double>::quiet_NaN()
                      : sit->second);
      }
      os << "\n";
    }
  }

  {
    std::ofstream os(fs::path(out_dir) / "exit_by_overlap.csv", std::ios::trunc);
    if (!os) throw DataError("emit_report: cannot write exit_by_overlap.csv");
    os << "tau,overlap,mean_exit_layer,count";
    for (int l = 1; l <= report.model_layers; ++l) os << ",hist_" << l;
    os << "\n";
    for (const BenchRow& row : report.rows)
      for (const ExitBucket& b : row.exit_buckets) {
        os << fmt(row.tau) << ',' << fmt(b.overlap) << ',' << fmt(b.mean_exit)
           << ',' << b.count;
        for (int l = 1; l <= report.model_layers; ++l) {
          const auto it = b.hist.find(l);
          os << ',' << (it == b.hist.end() ? 0L : it->second);
        }
        os << "\n";
      }
  }

  // exit layer vs overlap, one series per threshold
  {
    std::vector<PlotSeries> series;
    const std::vector<Rgb> palette = {{215, 48, 39},  {69, 117, 180},
                                      {27, 158, 119}, {217, 95, 2},
                                      {117, 112, 179}, {102, 102, 102}};
    for (size_t i = 0; i < report.rows.size(); ++i) {
      PlotSeries s;
      for (const ExitBucket& b : report.rows[i].exit_buckets) {
        s.x.push_back(b.overlap);
        s.y.push_back(b.mean_exit);
      }
      s.color = palette[i % palette.size()];
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%g", report.rows[i].tau);
      s.label = buf;
      series.push_back(std::move(s));
    }
    render_line_plot((fs::path(out_dir) / "exit_by_overlap.png").string(), series);
  }
  {
    PlotSeries s;
    for (size_t i = 0; i < report.rows.size(); ++i) {
      s.x.push_back(static_cast<double>(i));
      s.y.push_back(report.rows[i].speedup);
    }
    s.color = {69, 117, 180};
    render_line_plot((fs::path(out_dir) / "speedup.png").string(), {s});
  }
}

BenchReport load_report(const std::string& dir) {
  BenchReport report;
  std::ifstream is(fs::path(dir) / "sweep.csv");
  if (!is) throw DataError("load_report: missing sweep.csv in " + dir);
  std::string line;
  if (!std::getline(is, line)) throw DataError("load_report: empty sweep.csv");
  const std::vector<std::string> header = split_csv(line);
  for (const std::string& col : header)
    if (col.rfind("exit_", 0) == 0)
      report.buckets.push_back(std::stod(col.substr(5)) / 100.0);

  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> f = split_csv(line);
    if (f.size() != header.size())
      throw DataError("load_report: ragged row in sweep.csv");
    BenchRow row;
    row.tau = std::strtod(f[0].c_str(), nullptr);
    row.avg_exit_layer = std::strtod(f[1].c_str(), nullptr);
    row.speedup = std::strtod(f[2].c_str(), nullptr);
    row.median_seconds = std::strtod(f[3].c_str(), nullptr);
    for (size_t b = 0; b < report.buckets.size(); ++b) {
      const double overlap = report.buckets[b];
      const double mse = std::strtod(f[4 + b * 3 + 1].c_str(), nullptr);
      const double sisnri = std::strtod(f[4 + b * 3 + 2].c_str(), nullptr);
      if (!std::isnan(mse)) row.bucket_mse[overlap] = mse;
      if (!std::isnan(sisnri)) row.bucket_sisnri[overlap] = sisnri;
    }
    report.rows.push_back(std::move(row));
  }

  std::ifstream eb(fs::path(dir) / "exit_by_overlap.csv");
  if (eb) {
    std::getline(eb, line);
    const std::vector<std::string> header2 = split_csv(line);
    report.model_layers = static_cast<int>(header2.size()) - 4;
    while (std::getline(eb, line)) {
      if (line.empty()) continue;
      const std::vector<std::string> f = split_csv(line);
      const double tau = std::strtod(f[0].c_str(), nullptr);
      ExitBucket b;
      b.overlap = std::strtod(f[1].c_str(), nullptr);
      b.mean_exit = std::strtod(f[2].c_str(), nullptr);
      b.count = std::strtol(f[3].c_str(), nullptr, 10);
      for (int l = 1; l <= report.model_layers; ++l) {
        const long c = std::strtol(f[static_cast<size_t>(3 + l)].c_str(), nullptr, 10);
        if (c != 0) b.hist[l] = c;
      }
      for (BenchRow& row : report.rows) {
        const bool same = (std::isinf(tau) && std::isinf(row.tau)) || tau == row.tau;
        if (same) {
          row.exit_buckets.push_back(b);
          break;
        }
      }
    }
  }
  return report;
}

}  // namespace exsep
