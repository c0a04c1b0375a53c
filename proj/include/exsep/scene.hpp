// Copyright 2026 exsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

// Synthetic multi-channel scenes with a controlled overlap ratio. Sources are
// band-limited noise with a slow amplitude modulation; spatial structure
// comes from anechoic per-channel fractional delays applied as FFT-domain
// phase shifts. Channel 1 carries the undelayed source images used as
// references and as the ideal-mask target.

#include <optional>
#include <string>
#include <vector>

#include "exsep/common.hpp"
#include "exsep/mask.hpp"
#include "exsep/wav.hpp"

namespace exsep {

// Maximum per-channel delay magnitude in samples (physical aperture bound).
inline constexpr double kMaxDelaySamples = 16.0;

struct SourceSpec {
  int onset_frame = 0;   // activity start, in hop-sized frames
  int length_frames = 0; // activity length, in frames
  double gain_db = 0.0;
  double band_lo_hz = 300.0;
  double band_hi_hz = 3000.0;
  std::vector<double> delays;  // per channel, samples; delays[0] must be 0
};

struct SceneSpec {
  int num_sources = 2;  // <= 2
  int channels = 2;
  int sample_rate = 16000;
  int n_fft = 256;
  int hop = 128;
  double noise_snr_db = 5.0;  // >= 200 means no noise
  double overlap_target = 0.0;
  uint64_t seed = 0;
  std::vector<SourceSpec> sources;
};

struct AudioScene {
  SceneSpec spec;
  std::vector<std::vector<double>> mixture;     // [channel][sample]
  std::vector<std::vector<double>> references;  // [source][sample], channel 1
  std::vector<double> noise_ref;                // channel 1 noise
  std::vector<std::vector<double>> noise_all;   // [channel][sample]; may be
                                                // empty after loading from disk
  std::vector<std::vector<bool>> activity;      // [source][frame]
  double overlap_achieved = 0.0;

  long length() const {
    return mixture.empty() ? 0 : static_cast<long>(mixture[0].size());
  }
  int total_frames() const;
};

// Delay by a possibly fractional number of samples via an FFT phase ramp on a
// zero-padded buffer. |delay| must stay well under the padding (64 samples).
std::vector<double> fractional_delay(const std::vector<double>& x, double delay);

// Fills in onset/length fields for two equal-length sources hitting the
// overlap target: ratio = shared / union counted in frames.
void plan_overlap(SceneSpec& spec, int source_frames);

AudioScene synth_scene(const SceneSpec& spec);

// Ideal ratio masks on channel 1. Speaker streams are |X_s| / denom with
// denom = sum_j |X_j| + |noise| + eps; the noise stream absorbs the rest so
// the streams sum to one per bin.
MaskStack ideal_masks(const AudioScene& scene, int n_fft, int hop);

struct SceneRecipe {
  int count = 0;
  int num_sources = 2;
  int channels = 3;
  int sample_rate = 16000;
  int n_fft = 256;
  int hop = 128;
  int source_frames = 150;
  std::vector<double> overlap_choices = {0.0, 0.1, 0.2, 0.3, 0.4};
  bool stratified = true;  // cycle overlap choices by index instead of sampling
  double gain_db_lo = -5.0, gain_db_hi = 5.0;
  double snr_db_lo = 0.0, snr_db_hi = 10.0;
  uint64_t seed = 0;
};

SceneSpec draw_scene_spec(const SceneRecipe& recipe, int index);

struct ManifestEntry {
  std::string path;  // scene stem, relative to the manifest directory
  uint64_t seed = 0;
  double overlap = 0.0;
  double duration_s = 0.0;
  int channels = 0;
  int sources = 0;
};

// Writes scenes as raw f64 files (<stem>.mix.raw, .src1.raw, .src2.raw,
// .noise.raw) plus a JSON-lines manifest. Deterministic per recipe.
std::vector<ManifestEntry> dataset_generate(const SceneRecipe& recipe,
                                            const std::string& out_dir,
                                            const std::string& manifest_name =
                                                "manifest.jsonl");

std::vector<ManifestEntry> read_manifest(const std::string& manifest_path);

void save_scene(const AudioScene& scene, const std::string& stem);
// Loads mixture + references; per-channel noise is not stored on disk.
AudioScene load_scene(const SceneSpec& spec_hint, const std::string& stem);
// Loads using manifest metadata only (re-derives activity from references).
AudioScene load_scene(const std::string& stem);

}  // namespace exsep
