// Copyright 2026 exsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "exsep/scene.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "exsep/signal.hpp"

namespace exsep {

namespace fs = std::filesystem;
using nlohmann::json;

int AudioScene::total_frames() const {
  if (mixture.empty()) return 0;
  const long len = length();
  if (len < spec.n_fft) return 0;
  return static_cast<int>((len - spec.n_fft) / spec.hop) + 1;
}

namespace {

int next_pow2(long n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

double rms(std::span<const double> x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return x.empty() ? 0.0 : std::sqrt(e / static_cast<double>(x.size()));
}

void validate(const SceneSpec& spec) {
  if (spec.num_sources < 1 || spec.num_sources > 2)
    throw ContractError("scene: num_sources must be 1 or 2");
  if (static_cast<int>(spec.sources.size()) != spec.num_sources)
    throw ContractError("scene: sources list does not match num_sources");
  if (spec.channels < 1) throw ContractError("scene: channels must be >= 1");
  if (spec.overlap_target < 0.0 || spec.overlap_target > 1.0)
    throw ContractError("scene: overlap ratio must lie in [0,1], got " +
                        std::to_string(spec.overlap_target));
  for (const SourceSpec& s : spec.sources) {
    if (s.length_frames <= 0 || s.onset_frame < 0)
      throw ContractError("scene: bad source activity window");
    if (static_cast<int>(s.delays.size()) != spec.channels)
      throw ContractError("scene: delay list does not match channel count");
    if (s.delays[0] != 0.0)
      throw ContractError("scene: channel-1 delay must be zero");
    for (double d : s.delays)
      if (std::fabs(d) > kMaxDelaySamples)
        throw ContractError("scene: delay exceeds aperture bound");
  }
}

// Band-limited modulated noise burst of `len` samples, unit RMS.
std::vector<double> make_source_burst(int len, int sample_rate, double lo_hz,
                                      double hi_hz, Rng& rng) {
  std::vector<double> x(static_cast<size_t>(len));
  for (double& v : x) v = rng.normal();

  const int nfft = next_pow2(len + 1);
  std::vector<std::complex<double>> buf(static_cast<size_t>(nfft), {0.0, 0.0});
  for (int i = 0; i < len; ++i) buf[static_cast<size_t>(i)] = {x[static_cast<size_t>(i)], 0.0};
  Fft fft(nfft);
  fft.forward(buf.data());
  for (int k = 0; k <= nfft / 2; ++k) {
    const double f = static_cast<double>(k) * sample_rate / nfft;
    if (f < lo_hz || f > hi_hz) {
      buf[static_cast<size_t>(k)] = {0.0, 0.0};
      if (k > 0 && k < nfft / 2) buf[static_cast<size_t>(nfft - k)] = {0.0, 0.0};
    }
  }
  fft.inverse(buf.data());
  for (int i = 0; i < len; ++i) x[static_cast<size_t>(i)] = buf[static_cast<size_t>(i)].real();

  // slow amplitude modulation plus raised-cosine edges
  const double phase = rng.uniform(0.0, 2.0 * kPi);
  for (int i = 0; i < len; ++i) {
    const double t = static_cast<double>(i) / sample_rate;
    const double env = (1.0 + 0.9 * std::sin(2.0 * kPi * 4.0 * t + phase)) / 1.9;
    x[static_cast<size_t>(i)] *= env;
  }
  const int ramp = std::min(len / 4, sample_rate / 100);
  for (int i = 0; i < ramp; ++i) {
    const double w = 0.5 * (1.0 - std::cos(kPi * (i + 1) / (ramp + 1)));
    x[static_cast<size_t>(i)] *= w;
    x[static_cast<size_t>(len - 1 - i)] *= w;
  }

  const double r = rms(x);
  if (r > 0.0)
    for (double& v : x) v /= r;
  return x;
}

}  // namespace

std::vector<double> fractional_delay(const std::vector<double>& x,
                                     double delay) {
  if (std::fabs(delay) > 64.0)
    throw ContractError("fractional_delay: |delay| exceeds padding margin");
  const long len = static_cast<long>(x.size());
  const int nfft = next_pow2(len + 128);
  std::vector<std::complex<double>> buf(static_cast<size_t>(nfft), {0.0, 0.0});
  for (long i = 0; i < len; ++i) buf[static_cast<size_t>(i)] = {x[static_cast<size_t>(i)], 0.0};
  Fft fft(nfft);
  fft.forward(buf.data());
  for (int k = 0; k < nfft; ++k) {
    const int freq = k <= nfft / 2 ? k : k - nfft;  // signed bin index
    const double a = -2.0 * kPi * freq * delay / nfft;
    buf[static_cast<size_t>(k)] *= std::complex<double>(std::cos(a), std::sin(a));
  }
  fft.inverse(buf.data());
  std::vector<double> out(static_cast<size_t>(len));
  for (long i = 0; i < len; ++i) out[static_cast<size_t>(i)] = buf[static_cast<size_t>(i)].real();
  return out;
}

void plan_overlap(SceneSpec& spec, int source_frames) {
  if (spec.overlap_target < 0.0 || spec.overlap_target > 1.0)
    throw ContractError("plan_overlap: overlap ratio must lie in [0,1], got " +
                        std::to_string(spec.overlap_target));
  if (source_frames <= 0) throw ContractError("plan_overlap: source_frames must be positive");
  const int lead = 2;
  if (spec.num_sources == 1) {
    spec.sources.resize(1);
    spec.sources[0].onset_frame = lead;
    spec.sources[0].length_frames = source_frames;
    return;
  }
  const double d = source_frames;
  const double rho = spec.overlap_target;
  const int shared = static_cast<int>(std::lround(2.0 * d * rho / (1.0 + rho)));
  if (shared > source_frames)
    throw ContractError("plan_overlap: target overlap exceeds source length");
  spec.sources.resize(2);
  spec.sources[0].onset_frame = lead;
  spec.sources[0].length_frames = source_frames;
  spec.sources[1].onset_frame = lead + source_frames - shared;
  spec.sources[1].length_frames = source_frames;
}

AudioScene synth_scene(const SceneSpec& spec) {
  validate(spec);
  Rng rng(spec.seed);

  int end_frame = 0;
  for (const SourceSpec& s : spec.sources)
    end_frame = std::max(end_frame, s.onset_frame + s.length_frames);
  const int total_frames = end_frame + 2;
  const long len = static_cast<long>(total_frames) * spec.hop + spec.n_fft;

  AudioScene scene;
  scene.spec = spec;
  scene.references.assign(static_cast<size_t>(spec.num_sources),
                          std::vector<double>(static_cast<size_t>(len), 0.0));
  scene.activity.assign(static_cast<size_t>(spec.num_sources),
                        std::vector<bool>(static_cast<size_t>(total_frames), false));

  for (int s = 0; s < spec.num_sources; ++s) {
    const SourceSpec& src = spec.sources[static_cast<size_t>(s)];
    Rng srng = rng.fork(static_cast<uint64_t>(s) + 1);
    const int burst_len = src.length_frames * spec.hop;
    std::vector<double> burst = make_source_burst(
        burst_len, spec.sample_rate, src.band_lo_hz, src.band_hi_hz, srng);
    const double amp = 0.05 * std::pow(10.0, src.gain_db / 20.0);
    const long at = static_cast<long>(src.onset_frame) * spec.hop;
    for (int i = 0; i < burst_len; ++i)
      scene.references[static_cast<size_t>(s)][static_cast<size_t>(at + i)] =
          amp * burst[static_cast<size_t>(i)];
    for (int t = src.onset_frame; t < src.onset_frame + src.length_frames; ++t)
      scene.activity[static_cast<size_t>(s)][static_cast<size_t>(t)] = true;
  }

  // overlap bookkeeping
  int shared = 0, united = 0;
  for (int t = 0; t < total_frames; ++t) {
    bool any = false, all = true;
    for (int s = 0; s < spec.num_sources; ++s) {
      const bool a = scene.activity[static_cast<size_t>(s)][static_cast<size_t>(t)];
      any = any || a;
      all = all && a;
    }
    if (any) ++united;
    if (all && spec.num_sources > 1) ++shared;
  }
  if (united == 0) throw ContractError("scene: no active frames");
  scene.overlap_achieved =
      spec.num_sources > 1 ? static_cast<double>(shared) / united : 0.0;

  // noise, scaled against source power over the active union
  scene.noise_all.assign(static_cast<size_t>(spec.channels),
                         std::vector<double>(static_cast<size_t>(len), 0.0));
  if (spec.noise_snr_db < 200.0) {
    std::vector<double> active_sum;
    for (int t = 0; t < total_frames; ++t) {
      bool any = false;
      for (int s = 0; s < spec.num_sources; ++s)
        any = any || scene.activity[static_cast<size_t>(s)][static_cast<size_t>(t)];
      if (!any) continue;
      for (int i = 0; i < spec.hop; ++i) {
        double v = 0.0;
        const long idx = static_cast<long>(t) * spec.hop + i;
        for (int s = 0; s < spec.num_sources; ++s)
          v += scene.references[static_cast<size_t>(s)][static_cast<size_t>(idx)];
        active_sum.push_back(v);
      }
    }
    const double src_rms = rms(active_sum);
    const double noise_rms = src_rms * std::pow(10.0, -spec.noise_snr_db / 20.0);
    for (int c = 0; c < spec.channels; ++c) {
      Rng nrng = rng.fork(100 + static_cast<uint64_t>(c));
      for (long i = 0; i < len; ++i)
        scene.noise_all[static_cast<size_t>(c)][static_cast<size_t>(i)] =
            noise_rms * nrng.normal();
    }
  }
  scene.noise_ref = scene.noise_all[0];

  // mixture: channel 1 sums the references directly; other channels apply
  // the per-source delays
  scene.mixture.assign(static_cast<size_t>(spec.channels),
                       std::vector<double>(static_cast<size_t>(len), 0.0));
  for (int c = 0; c < spec.channels; ++c) {
    std::vector<double>& mix = scene.mixture[static_cast<size_t>(c)];
    for (int s = 0; s < spec.num_sources; ++s) {
      const double d = spec.sources[static_cast<size_t>(s)].delays[static_cast<size_t>(c)];
      if (c == 0 || d == 0.0) {
        const auto& ref = scene.references[static_cast<size_t>(s)];
        for (long i = 0; i < len; ++i) mix[static_cast<size_t>(i)] += ref[static_cast<size_t>(i)];
      } else {
        const std::vector<double> delayed =
            fractional_delay(scene.references[static_cast<size_t>(s)], d);
        for (long i = 0; i < len; ++i) mix[static_cast<size_t>(i)] += delayed[static_cast<size_t>(i)];
      }
    }
    const auto& nz = scene.noise_all[static_cast<size_t>(c)];
    for (long i = 0; i < len; ++i) mix[static_cast<size_t>(i)] += nz[static_cast<size_t>(i)];
  }
  return scene;
}

MaskStack ideal_masks(const AudioScene& scene, int n_fft, int hop) {
  if (scene.references.empty())
    throw ContractError("ideal_masks: scene has no references");
  const int num_src = static_cast<int>(scene.references.size());
  std::vector<Spectrogram> specs;
  for (int s = 0; s < num_src; ++s)
    specs.push_back(stft(scene.references[static_cast<size_t>(s)], n_fft, hop,
                         scene.spec.sample_rate));
  Spectrogram noise_spec =
      stft(scene.noise_ref, n_fft, hop, scene.spec.sample_rate);

  const int frames = specs[0].frames;
  const int bins = specs[0].bins;
  const int streams = num_src + 1;
  constexpr double eps = 1e-12;

  MaskStack masks(frames, bins, streams);
  for (int t = 0; t < frames; ++t)
    for (int f = 0; f < bins; ++f) {
      double denom = eps + std::abs(noise_spec.at(t, f));
      for (int s = 0; s < num_src; ++s)
        denom += std::abs(specs[static_cast<size_t>(s)].at(t, f));
      double speaker_sum = 0.0;
      for (int s = 0; s < num_src; ++s) {
        const double m = std::abs(specs[static_cast<size_t>(s)].at(t, f)) / denom;
        masks.at(t, f, s) = m;
        speaker_sum += m;
      }
      masks.at(t, f, streams - 1) = 1.0 - speaker_sum;
    }
  return masks;
}

SceneSpec draw_scene_spec(const SceneRecipe& recipe, int index) {
  Rng base(recipe.seed);
  Rng rng = base.fork(static_cast<uint64_t>(index));

  SceneSpec spec;
  spec.num_sources = recipe.num_sources;
  spec.channels = recipe.channels;
  spec.sample_rate = recipe.sample_rate;
  spec.n_fft = recipe.n_fft;
  spec.hop = recipe.hop;
  spec.seed = rng.next_u64();
  if (recipe.overlap_choices.empty())
    throw ContractError("recipe: overlap_choices empty");
  spec.overlap_target =
      recipe.stratified
          ? recipe.overlap_choices[static_cast<size_t>(index) %
                                   recipe.overlap_choices.size()]
          : recipe.overlap_choices[rng.uniform_index(recipe.overlap_choices.size())];
  spec.noise_snr_db = rng.uniform(recipe.snr_db_lo, recipe.snr_db_hi);
  plan_overlap(spec, recipe.source_frames);

  for (int s = 0; s < spec.num_sources; ++s) {
    SourceSpec& src = spec.sources[static_cast<size_t>(s)];
    src.gain_db = rng.uniform(recipe.gain_db_lo, recipe.gain_db_hi);
    if (s == 0) {
      src.band_lo_hz = rng.uniform(200.0, 600.0);
      src.band_hi_hz = rng.uniform(1800.0, 3000.0);
    } else {
      src.band_lo_hz = rng.uniform(1200.0, 2200.0);
      src.band_hi_hz = rng.uniform(4000.0, 6000.0);
    }
    src.delays.assign(static_cast<size_t>(spec.channels), 0.0);
    if (spec.channels > 1) {
      const double max_slope = kMaxDelaySamples / (spec.channels - 1);
      double slope = rng.uniform(-max_slope, max_slope);
      // keep sources spatially distinct
      if (s == 1 && std::fabs(slope - spec.sources[0].delays[1]) < 1.0)
        slope += slope >= spec.sources[0].delays[1] ? 1.0 : -1.0;
      slope = std::clamp(slope, -max_slope, max_slope);
      for (int c = 1; c < spec.channels; ++c)
        src.delays[static_cast<size_t>(c)] = slope * c;
    }
  }
  return spec;
}

static std::string scene_stem(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%06d", index);
  return buf;
}

std::vector<ManifestEntry> dataset_generate(const SceneRecipe& recipe,
                                            const std::string& out_dir,
                                            const std::string& manifest_name) {
  fs::create_directories(out_dir);
  std::vector<ManifestEntry> entries(static_cast<size_t>(recipe.count));

  // exceptions cannot unwind out of the parallel region; carry the first one
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < recipe.count; ++i) {
    try {
      const SceneSpec spec = draw_scene_spec(recipe, i);
      const AudioScene scene = synth_scene(spec);
      const std::string stem = scene_stem(i);
      save_scene(scene, (fs::path(out_dir) / stem).string());
      ManifestEntry e;
      e.path = stem;
      e.seed = spec.seed;
      e.overlap = spec.overlap_target;
      e.duration_s = static_cast<double>(scene.length()) / spec.sample_rate;
      e.channels = spec.channels;
      e.sources = spec.num_sources;
      entries[static_cast<size_t>(i)] = e;
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);

  const fs::path manifest_path = fs::path(out_dir) / manifest_name;
  std::ofstream os(manifest_path);
  if (!os) throw DataError("dataset: cannot write manifest: " + manifest_path.string());
  for (const ManifestEntry& e : entries) {
    json j;
    j["path"] = e.path;
    j["seed"] = e.seed;
    j["overlap"] = e.overlap;
    j["duration_s"] = e.duration_s;
    j["channels"] = e.channels;
    j["sources"] = e.sources;
    os << j.dump() << "\n";
  }
  return entries;
}

std::vector<ManifestEntry> read_manifest(const std::string& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is) throw DataError("manifest: cannot open: " + manifest_path);
  const fs::path dir = fs::path(manifest_path).parent_path();
  std::vector<ManifestEntry> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError("manifest: parse error at line " + std::to_string(lineno) +
                      ": " + e.what());
    }
    ManifestEntry e;
    e.path = (dir / j.at("path").get<std::string>()).string();
    e.seed = j.at("seed").get<uint64_t>();
    e.overlap = j.at("overlap").get<double>();
    e.duration_s = j.at("duration_s").get<double>();
    e.channels = j.at("channels").get<int>();
    e.sources = j.at("sources").get<int>();
    entries.push_back(std::move(e));
  }
  return entries;
}

void save_scene(const AudioScene& scene, const std::string& stem) {
  Audio mix;
  mix.sample_rate = scene.spec.sample_rate;
  mix.channels = scene.mixture;
  write_raw_f64(stem + ".mix.raw", mix);
  for (size_t s = 0; s < scene.references.size(); ++s) {
    Audio ref;
    ref.sample_rate = scene.spec.sample_rate;
    ref.channels = {scene.references[s]};
    write_raw_f64(stem + ".src" + std::to_string(s + 1) + ".raw", ref);
  }
  Audio nz;
  nz.sample_rate = scene.spec.sample_rate;
  nz.channels = {scene.noise_ref};
  write_raw_f64(stem + ".noise.raw", nz);
}

AudioScene load_scene(const SceneSpec& spec_hint, const std::string& stem) {
  AudioScene scene;
  scene.spec = spec_hint;
  Audio mix = read_raw_f64(stem + ".mix.raw");
  scene.spec.channels = mix.num_channels();
  scene.spec.sample_rate = mix.sample_rate;
  scene.mixture = std::move(mix.channels);
  for (int s = 1;; ++s) {
    const std::string p = stem + ".src" + std::to_string(s) + ".raw";
    if (!fs::exists(p)) break;
    Audio ref = read_raw_f64(p);
    scene.references.push_back(std::move(ref.channels[0]));
  }
  scene.spec.num_sources = static_cast<int>(scene.references.size());
  Audio nz = read_raw_f64(stem + ".noise.raw");
  scene.noise_ref = std::move(nz.channels[0]);

  // activity from reference energy per frame
  const int frames = scene.total_frames();
  scene.activity.assign(scene.references.size(),
                        std::vector<bool>(static_cast<size_t>(frames), false));
  for (size_t s = 0; s < scene.references.size(); ++s) {
    double peak = 0.0;
    for (double v : scene.references[s]) peak = std::max(peak, std::fabs(v));
    const double thr = peak * 1e-3;
    for (int t = 0; t < frames; ++t) {
      const long a = static_cast<long>(t) * scene.spec.hop;
      const long b = std::min<long>(a + scene.spec.hop,
                                    static_cast<long>(scene.references[s].size()));
      bool on = false;
      for (long i = a; i < b && !on; ++i)
        on = std::fabs(scene.references[s][static_cast<size_t>(i)]) > thr;
      scene.activity[s][static_cast<size_t>(t)] = on;
    }
  }
  return scene;
}

AudioScene load_scene(const std::string& stem) {
  SceneSpec hint;
  return load_scene(hint, stem);
}

}  // namespace exsep
