// Copyright 2026 exsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "exsep/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace exsep {

using nlohmann::json;

ExperimentConfig ExperimentConfig::defaults() {
  ExperimentConfig cfg;
  cfg.dataset.count = 200;
  cfg.dataset.seed = cfg.seed;
  cfg.training.steps = 20000;
  cfg.training.schedule.total = 20000;
  cfg.training.seed = cfg.seed;
  return cfg;
}

namespace {

double tau_from_json(const json& j) {
  if (j.is_string()) return parse_tau(j.get<std::string>());
  return j.get<double>();
}

json tau_to_json(double tau) {
  if (std::isinf(tau)) return "inf";
  return tau;
}

}  // namespace

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("config: cannot open: " + path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw DataError("config: bad JSON in " + path + ": " + e.what());
  }

  ExperimentConfig cfg = defaults();
  if (j.contains("seed")) cfg.seed = j["seed"].get<uint64_t>();
  cfg.dataset.seed = cfg.seed;
  cfg.training.seed = cfg.seed;

  if (j.contains("dataset")) {
    const json& d = j["dataset"];
    if (d.contains("dir")) cfg.dataset_dir = d["dir"].get<std::string>();
    if (d.contains("test_dir")) cfg.testset_dir = d["test_dir"].get<std::string>();
    if (d.contains("count")) cfg.dataset.count = d["count"].get<int>();
    if (d.contains("test_count")) cfg.testset_count = d["test_count"].get<int>();
    if (d.contains("channels")) cfg.dataset.channels = d["channels"].get<int>();
    if (d.contains("sources")) cfg.dataset.num_sources = d["sources"].get<int>();
    if (d.contains("source_frames"))
      cfg.dataset.source_frames = d["source_frames"].get<int>();
    if (d.contains("overlaps"))
      cfg.dataset.overlap_choices = d["overlaps"].get<std::vector<double>>();
    if (d.contains("stratified")) cfg.dataset.stratified = d["stratified"].get<bool>();
    if (d.contains("gain_db")) {
      cfg.dataset.gain_db_lo = d["gain_db"][0].get<double>();
      cfg.dataset.gain_db_hi = d["gain_db"][1].get<double>();
    }
    if (d.contains("snr_db")) {
      cfg.dataset.snr_db_lo = d["snr_db"][0].get<double>();
      cfg.dataset.snr_db_hi = d["snr_db"][1].get<double>();
    }
    if (d.contains("seed")) cfg.dataset.seed = d["seed"].get<uint64_t>();
  }

  if (j.contains("model")) {
    try {
      cfg.model = ModelConfig::from_json(j["model"].dump());
    } catch (const json::exception& e) {
      throw DataError(std::string("config: bad model section: ") + e.what());
    }
  }
  cfg.dataset.n_fft = cfg.model.n_fft;
  cfg.dataset.hop = cfg.model.hop;
  cfg.dataset.sample_rate = cfg.model.sample_rate;
  cfg.dataset.channels = std::max(cfg.dataset.channels, cfg.model.channels);

  if (j.contains("training")) {
    const json& t = j["training"];
    if (t.contains("steps")) cfg.training.steps = t["steps"].get<long>();
    if (t.contains("batch")) cfg.training.batch = t["batch"].get<int>();
    if (t.contains("crop_frames")) cfg.training.crop_frames = t["crop_frames"].get<int>();
    if (t.contains("peak_lr")) cfg.training.schedule.peak = t["peak_lr"].get<double>();
    if (t.contains("warmup")) cfg.training.schedule.warmup = t["warmup"].get<long>();
    if (t.contains("total_steps"))
      cfg.training.schedule.total = t["total_steps"].get<long>();
    else
      cfg.training.schedule.total = cfg.training.steps;
    if (t.contains("weight_decay"))
      cfg.training.adamw.weight_decay = t["weight_decay"].get<double>();
    if (t.contains("clip_norm")) cfg.training.clip_norm = t["clip_norm"].get<double>();
    if (t.contains("val_fraction"))
      cfg.training.val_fraction = t["val_fraction"].get<double>();
    if (t.contains("val_interval"))
      cfg.training.val_interval = t["val_interval"].get<long>();
    if (t.contains("log_interval"))
      cfg.training.log_interval = t["log_interval"].get<long>();
    if (t.contains("seed")) cfg.training.seed = t["seed"].get<uint64_t>();
  } else {
    cfg.training.schedule.total = cfg.training.steps;
  }

  if (j.contains("exit")) {
    const json& e = j["exit"];
    if (e.contains("taus")) {
      cfg.taus.clear();
      for (const json& t : e["taus"]) cfg.taus.push_back(tau_from_json(t));
    }
    if (e.contains("min_layer")) cfg.exit_min_layer = e["min_layer"].get<int>();
    if (e.contains("include_noise"))
      cfg.exit_include_noise = e["include_noise"].get<bool>();
  }

  if (j.contains("css")) {
    const json& c = j["css"];
    if (c.contains("window_frames")) cfg.css.window_frames = c["window_frames"].get<int>();
    if (c.contains("hop_frames")) cfg.css.hop_frames = c["hop_frames"].get<int>();
  }

  if (j.contains("bench")) {
    const json& b = j["bench"];
    if (b.contains("reps")) cfg.bench_reps = b["reps"].get<int>();
    if (b.contains("timing_chunks"))
      cfg.bench_timing_chunks = b["timing_chunks"].get<int>();
    if (b.contains("quality")) cfg.bench_quality = b["quality"].get<bool>();
  }

  if (j.contains("out")) {
    const json& o = j["out"];
    if (o.contains("checkpoint")) cfg.checkpoint = o["checkpoint"].get<std::string>();
    if (o.contains("checkpoint_last"))
      cfg.checkpoint_last = o["checkpoint_last"].get<std::string>();
    if (o.contains("train_log")) cfg.train_log = o["train_log"].get<std::string>();
    if (o.contains("report_dir")) cfg.report_dir = o["report_dir"].get<std::string>();
  }
  return cfg;
}

std::string ExperimentConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["dataset"] = {
      {"dir", dataset_dir},   {"test_dir", testset_dir},
      {"count", dataset.count}, {"test_count", testset_count},
      {"channels", dataset.channels}, {"sources", dataset.num_sources},
      {"source_frames", dataset.source_frames},
      {"overlaps", dataset.overlap_choices}, {"stratified", dataset.stratified},
      {"gain_db", {dataset.gain_db_lo, dataset.gain_db_hi}},
      {"snr_db", {dataset.snr_db_lo, dataset.snr_db_hi}},
  };
  j["model"] = json::parse(model.to_json());
  j["training"] = {
      {"steps", training.steps},
      {"batch", training.batch},
      {"crop_frames", training.crop_frames},
      {"peak_lr", training.schedule.peak},
      {"warmup", training.schedule.warmup},
      {"total_steps", training.schedule.total},
      {"weight_decay", training.adamw.weight_decay},
      {"clip_norm", training.clip_norm},
      {"val_fraction", training.val_fraction},
      {"val_interval", training.val_interval},
      {"log_interval", training.log_interval},
  };
  json taus_json = json::array();
  for (double t : taus) taus_json.push_back(tau_to_json(t));
  j["exit"] = {{"taus", taus_json},
               {"min_layer", exit_min_layer},
               {"include_noise", exit_include_noise}};
  j["css"] = {{"window_frames", css.window_frames},
              {"hop_frames", css.hop_frames}};
  j["bench"] = {{"reps", bench_reps},
                {"timing_chunks", bench_timing_chunks},
                {"quality", bench_quality}};
  j["out"] = {{"checkpoint", checkpoint},
              {"checkpoint_last", checkpoint_last},
              {"train_log", train_log},
              {"report_dir", report_dir}};
  return j.dump(2);
}

double parse_tau(const std::string& text) {
  std::string t = text;
  std::transform(t.begin(), t.end(), t.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  if (t == "inf" || t == "infinity")
    return std::numeric_limits<double>::infinity();
  size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(t, &pos);
  } catch (const std::exception&) {
    throw ContractError("tau: cannot parse '" + text + "'");
  }
  if (pos != t.size()) throw ContractError("tau: trailing junk in '" + text + "'");
  if (v < 0.0) throw ContractError("tau: must be nonnegative");
  return v;
}

std::vector<double> parse_tau_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(parse_tau(item));
  }
  if (out.empty()) throw ContractError("tau list: empty");
  return out;
}

}  // namespace exsep
