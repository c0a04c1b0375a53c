// Copyright 2026 exsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "exsep/infer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

namespace exsep {

using nlohmann::json;

double layer_distance(const MaskStack& a, const MaskStack& b,
                      bool include_noise) {
  if (!a.same_shape(b))
    throw ContractError("layer_distance: mask stack shapes disagree");
  const int streams = include_noise ? a.streams : a.streams - 1;
  if (streams < 1) throw ContractError("layer_distance: no streams to compare");
  double acc = 0.0;
  for (int t = 0; t < a.frames; ++t)
    for (int f = 0; f < a.bins; ++f) {
      double sq = 0.0;
      for (int s = 0; s < streams; ++s) {
        const double d = a.at(t, f, s) - b.at(t, f, s);
        sq += d * d;
      }
      acc += std::sqrt(sq);
    }
  return acc / (static_cast<double>(a.frames) * a.bins);
}

std::pair<MaskStack, ExitTrace> run_early_exit(const SeparatorModel& model,
                                               const FeatureGrid& features,
                                               const ExitPolicy& policy,
                                               const std::string& chunk_id) {
  if (policy.tau < 0.0) throw ContractError("exit policy: tau must be nonnegative");
  if (policy.min_layer < 2)
    throw ContractError("exit policy: min checkable layer is 2");
  NoGradGuard ng;
  const int bins = model.config().bins;
  const int streams = model.config().streams;

  ExitTrace trace;
  trace.chunk_id = chunk_id;
  MaskStack prev;

  const int64_t t0 = wall_clock_ns();
  LayerActivation act =
      model.run(features, [&](int layer, const Tensor& mask) {
        MaskStack cur = to_mask_stack(mask, bins, streams);
        bool stop = false;
        if (layer >= policy.min_layer) {
          const double d = layer_distance(prev, cur, policy.include_noise);
          trace.dists.push_back(d);
          stop = d < policy.tau;
        }
        prev = std::move(cur);
        return stop;
      });
  trace.ns = wall_clock_ns() - t0;
  trace.exit_layer = act.exit_layer;
  return {std::move(prev), std::move(trace)};
}

std::vector<std::pair<int, int>> css_windows(int len, int window, int hop) {
  if (len < 1) throw ContractError("css_windows: empty input");
  if (window < 1 || hop < 1 || hop > window)
    throw ContractError("css_windows: need 0 < hop <= window");
  std::vector<std::pair<int, int>> out;
  if (len <= window) {
    out.emplace_back(0, len);
    return out;
  }
  const int count =
      static_cast<int>((static_cast<long>(len - window) + hop - 1) / hop) + 1;
  for (int i = 0; i < count; ++i) {
    const int start = i * hop;
    out.emplace_back(start, std::min(start + window, len));
  }
  return out;
}

namespace {

// Squared distance between stitched content and a permuted chunk over the
// overlap rows.
double overlap_cost(const MaskStack& out, const MaskStack& chunk, int start,
                    int ov_len, const std::vector<int>& perm) {
  const int n_spk = out.streams - 1;
  double acc = 0.0;
  for (int t = 0; t < ov_len; ++t)
    for (int f = 0; f < out.bins; ++f) {
      for (int s = 0; s < n_spk; ++s) {
        const double d =
            out.at(start + t, f, s) - chunk.at(t, f, perm[static_cast<size_t>(s)]);
        acc += d * d;
      }
      const double dn =
          out.at(start + t, f, n_spk) - chunk.at(t, f, n_spk);
      acc += dn * dn;
    }
  return acc;
}

}  // namespace

MaskStack stitch_masks(const std::vector<MaskStack>& chunks,
                       const std::vector<std::pair<int, int>>& windows,
                       int total_frames) {
  if (chunks.empty() || chunks.size() != windows.size())
    throw ContractError("stitch_masks: chunk/window lists disagree");
  const int bins = chunks[0].bins;
  const int streams = chunks[0].streams;
  const int n_spk = streams - 1;
  MaskStack out(total_frames, bins, streams);

  int filled_end = 0;
  for (size_t ci = 0; ci < chunks.size(); ++ci) {
    const MaskStack& chunk = chunks[ci];
    const auto [start, end] = windows[ci];
    if (chunk.frames != end - start || chunk.bins != bins ||
        chunk.streams != streams)
      throw ContractError("stitch_masks: chunk shape does not match its window");

    // winning speaker order against the already-stitched overlap
    std::vector<int> perm(static_cast<size_t>(n_spk));
    for (int s = 0; s < n_spk; ++s) perm[static_cast<size_t>(s)] = s;
    const int ov_len = std::max(0, std::min(filled_end, end) - start);
    if (ov_len > 0 && n_spk > 1) {
      std::vector<int> cand = perm;
      std::vector<int> best = perm;
      double best_cost = 0.0;
      bool first = true;
      do {
        const double c = overlap_cost(out, chunk, start, ov_len, cand);
        if (first || c < best_cost) {
          best_cost = c;
          best = cand;
          first = false;
        }
      } while (std::next_permutation(cand.begin(), cand.end()));
      perm = best;
    }

    auto chunk_at = [&](int t, int f, int s) {
      return s < n_spk ? chunk.at(t, f, perm[static_cast<size_t>(s)])
                       : chunk.at(t, f, s);
    };
    for (int t = 0; t < chunk.frames; ++t) {
      const int row = start + t;
      if (row < filled_end) {
        const double w_new = static_cast<double>(t + 1) / (ov_len + 1);
        for (int s = 0; s < streams; ++s)
          for (int f = 0; f < bins; ++f)
            out.at(row, f, s) = (1.0 - w_new) * out.at(row, f, s) +
                                w_new * chunk_at(t, f, s);
      } else {
        for (int s = 0; s < streams; ++s)
          for (int f = 0; f < bins; ++f) out.at(row, f, s) = chunk_at(t, f, s);
      }
    }
    filled_end = std::max(filled_end, end);
  }
  return out;
}

std::vector<double> reconstruct(const MaskStack& masks, int stream,
                                const Spectrogram& mixture_ch1) {
  if (masks.frames != mixture_ch1.frames || masks.bins != mixture_ch1.bins)
    throw ContractError("reconstruct: mask and spectrogram shapes disagree");
  if (stream < 0 || stream >= masks.streams)
    throw ContractError("reconstruct: stream index out of range");
  Spectrogram scaled = mixture_ch1;
  for (int t = 0; t < masks.frames; ++t)
    for (int f = 0; f < masks.bins; ++f)
      scaled.at(t, f) *= masks.at(t, f, stream);
  return istft(scaled);
}

SeparationResult separate(const SeparatorModel& model,
                          const std::vector<std::vector<double>>& channels,
                          int sample_rate, const ExitPolicy& policy,
                          const CssConfig& css,
                          const std::string& chunk_id_prefix) {
  const ModelConfig& cfg = model.config();
  if (static_cast<int>(channels.size()) < cfg.channels)
    throw DataError("separate: input has " + std::to_string(channels.size()) +
                    " channels, model wants " + std::to_string(cfg.channels));
  if (css.window_frames > cfg.max_len)
    throw ContractError("separate: window exceeds the model's max chunk length");

  std::vector<Spectrogram> specs;
  for (int c = 0; c < cfg.channels; ++c)
    specs.push_back(stft(channels[static_cast<size_t>(c)], cfg.n_fft, cfg.hop,
                         sample_rate));
  const int total = specs[0].frames;
  const auto windows = css_windows(total, css.window_frames, css.hop_frames);

  SeparationResult result;
  std::vector<MaskStack> masks;
  for (size_t i = 0; i < windows.size(); ++i) {
    const auto [s, e] = windows[i];
    FeatureGrid grid = assemble_features(specs, s, e);
    auto [mask, trace] = run_early_exit(model, grid, policy,
                                        chunk_id_prefix + "#" + std::to_string(i));
    masks.push_back(std::move(mask));
    result.traces.push_back(std::move(trace));
  }
  result.stitched = stitch_masks(masks, windows, total);

  const long in_len = static_cast<long>(channels[0].size());
  for (int s = 0; s < cfg.streams; ++s) {
    std::vector<double> wave = reconstruct(result.stitched, s, specs[0]);
    wave.resize(static_cast<size_t>(in_len), 0.0);
    result.streams.push_back(std::move(wave));
  }
  return result;
}

void write_traces(const std::string& path, const std::vector<ExitTrace>& traces) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("traces: cannot open for writing: " + path);
  for (const ExitTrace& t : traces) {
    json j;
    j["chunk_id"] = t.chunk_id;
    j["exit_layer"] = t.exit_layer;
    j["dists"] = t.dists;
    j["ns"] = t.ns;
    os << j.dump() << "\n";
  }
}

std::vector<ExitTrace> read_traces(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("traces: cannot open: " + path);
  std::vector<ExitTrace> traces;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    ExitTrace t;
    t.chunk_id = j.at("chunk_id").get<std::string>();
    t.exit_layer = j.at("exit_layer").get<int>();
    t.dists = j.at("dists").get<std::vector<double>>();
    t.ns = j.at("ns").get<int64_t>();
    traces.push_back(std::move(t));
  }
  return traces;
}

}  // namespace exsep
