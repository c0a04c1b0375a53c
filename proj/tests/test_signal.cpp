// Copyright 2026 exsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>

#include "exsep/signal.hpp"
#include "exsep/wav.hpp"
#include "test_util.hpp"

using namespace exsep;

TEST_CASE("fft matches the quadratic DFT oracle") {
  Rng rng(1);
  const int n = 64;
  std::vector<double> x = testutil::random_vec(static_cast<size_t>(n), rng);
  std::vector<std::complex<double>> buf(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) buf[static_cast<size_t>(i)] = {x[static_cast<size_t>(i)], 0.0};
  Fft fft(n);
  fft.forward(buf.data());
  const auto ref = testutil::naive_dft(x);
  for (int k = 0; k < n; ++k)
    CHECK(std::abs(buf[static_cast<size_t>(k)] - ref[static_cast<size_t>(k)]) < 1e-10);

  fft.inverse(buf.data());
  for (int i = 0; i < n; ++i)
    CHECK(buf[static_cast<size_t>(i)].real() == doctest::Approx(x[static_cast<size_t>(i)]).epsilon(1e-12));
  CHECK_THROWS_AS(Fft(48), ContractError);
}

TEST_CASE("stft of silence is silence; too-short input raises") {
  std::vector<double> zeros(1024, 0.0);
  Spectrogram spec = stft(zeros, 256, 128, 16000);
  CHECK(spec.frames == (1024 - 256) / 128 + 1);
  CHECK(spec.bins == 129);
  for (const auto& v : spec.v) CHECK(std::abs(v) == 0.0);

  std::vector<double> shorty(100, 0.0);
  CHECK_THROWS_AS(stft(shorty, 256, 128, 16000), DataError);
}

TEST_CASE("frame-aligned sine concentrates its bin by 20 dB or more") {
  const int n = 256, k0 = 19;
  std::vector<double> x(static_cast<size_t>(n) * 4);
  for (size_t i = 0; i < x.size(); ++i)
    x[i] = std::sin(2.0 * kPi * k0 * static_cast<double>(i) / n);
  Spectrogram spec = stft(x, n, n / 2, 16000);
  const int t = 1;
  const double peak = std::abs(spec.at(t, k0));
  for (int f = 0; f < spec.bins; ++f) {
    if (std::abs(f - k0) <= 2) continue;  // window mainlobe
    CHECK(20.0 * std::log10(peak / (std::abs(spec.at(t, f)) + 1e-300)) >= 20.0);
  }
}

TEST_CASE("stft equals the windowed DFT oracle frame by frame") {
  Rng rng(2);
  const int n = 128, hop = 64;
  std::vector<double> x = testutil::random_vec(700, rng);
  Spectrogram spec = stft(x, n, hop, 16000);
  for (int t = 0; t < spec.frames; t += 2) {
    const auto ref = testutil::naive_frame_spectrum(x.data() + static_cast<size_t>(t) * hop, n);
    for (int f = 0; f < spec.bins; ++f)
      CHECK(std::abs(spec.at(t, f) - ref[static_cast<size_t>(f)]) < 1e-9);
  }
}

TEST_CASE("istft round trip reproduces interior samples within 1e-6 relative") {
  Rng rng(3);
  const int n = 256, hop = 128;
  std::vector<double> x = testutil::random_vec(4000, rng);
  Spectrogram spec = stft(x, n, hop, 16000);
  const std::vector<double> y = istft(spec);
  REQUIRE(static_cast<int>(y.size()) == (spec.frames - 1) * hop + n);
  double num = 0.0, den = 0.0;
  for (size_t i = static_cast<size_t>(n); i + static_cast<size_t>(n) < y.size(); ++i) {
    num += (y[i] - x[i]) * (y[i] - x[i]);
    den += x[i] * x[i];
  }
  CHECK(std::sqrt(num / den) < 1e-6);
}

TEST_CASE("istft of an all-zero spectrogram is silence; bad metadata raises") {
  std::vector<double> zeros(2048, 0.0);
  Spectrogram spec = stft(zeros, 256, 128, 16000);
  for (double v : istft(spec)) CHECK(v == 0.0);

  Spectrogram broken = spec;
  broken.hop = 300;  // hop > window
  CHECK_THROWS_AS(istft(broken), DataError);
  broken = spec;
  broken.bins = 100;
  CHECK_THROWS_AS(istft(broken), DataError);
}

TEST_CASE("stft is linear within 1e-10 per bin") {
  Rng rng(4);
  std::vector<double> a = testutil::random_vec(2000, rng);
  std::vector<double> b = testutil::random_vec(2000, rng);
  std::vector<double> sum(a.size());
  for (size_t i = 0; i < a.size(); ++i) sum[i] = a[i] + b[i];
  Spectrogram sa = stft(a, 256, 128, 16000);
  Spectrogram sb = stft(b, 256, 128, 16000);
  Spectrogram ss = stft(sum, 256, 128, 16000);
  for (size_t i = 0; i < ss.v.size(); ++i)
    CHECK(std::abs(ss.v[i] - (sa.v[i] + sb.v[i])) < 1e-10);
}

TEST_CASE("phase wrap lands in (-pi, pi]") {
  CHECK(wrap_phase(3.0 * kPi / 2.0) == doctest::Approx(-kPi / 2.0).epsilon(1e-12));
  CHECK(wrap_phase(-3.0 * kPi / 2.0) == doctest::Approx(kPi / 2.0).epsilon(1e-12));
  CHECK(wrap_phase(kPi) == doctest::Approx(kPi).epsilon(1e-12));
  CHECK(wrap_phase(-kPi) == doctest::Approx(kPi).epsilon(1e-12));
  CHECK(wrap_phase(0.25) == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("ipd of identical channels is zero and shapes are enforced") {
  Rng rng(5);
  std::vector<double> x = testutil::random_vec(1500, rng);
  Spectrogram s1 = stft(x, 256, 128, 16000);
  for (double v : ipd(s1, s1)) CHECK(v == 0.0);

  std::vector<double> y = testutil::random_vec(3000, rng);
  Spectrogram s2 = stft(y, 256, 128, 16000);
  CHECK_THROWS_AS(ipd(s2, s1), ContractError);
}

TEST_CASE("ipd of an integer-delayed channel matches the DFT phase oracle") {
  Rng rng(6);
  const int n = 256, hop = 128, d = 4;
  std::vector<double> x = testutil::random_vec(3000, rng);
  std::vector<double> delayed(x.size(), 0.0);
  for (size_t i = static_cast<size_t>(d); i < x.size(); ++i) delayed[i] = x[i - static_cast<size_t>(d)];

  Spectrogram s1 = stft(x, n, hop, 16000);
  Spectrogram s2 = stft(delayed, n, hop, 16000);
  const std::vector<double> phases = ipd(s2, s1);

  // oracle: direct windowed DFT of both frames, skip frames touching the edges
  for (int t = 1; t + 1 < s1.frames; t += 3) {
    const auto ref1 = testutil::naive_frame_spectrum(x.data() + static_cast<size_t>(t) * hop, n);
    const auto ref2 = testutil::naive_frame_spectrum(delayed.data() + static_cast<size_t>(t) * hop, n);
    for (int f = 1; f < s1.bins - 1; f += 7) {
      const double expect = wrap_phase(std::arg(ref2[static_cast<size_t>(f)]) -
                                       std::arg(ref1[static_cast<size_t>(f)]));
      const double got = phases[static_cast<size_t>(t) * s1.bins + static_cast<size_t>(f)];
      CHECK(std::fabs(wrap_phase(got - expect)) < 1e-6);
    }
  }
}

TEST_CASE("ipd antisymmetry") {
  Rng rng(7);
  std::vector<double> x = testutil::random_vec(2000, rng);
  std::vector<double> y = testutil::random_vec(2000, rng);
  Spectrogram sx = stft(x, 256, 128, 16000);
  Spectrogram sy = stft(y, 256, 128, 16000);
  const auto ab = ipd(sx, sy);
  const auto ba = ipd(sy, sx);
  for (size_t i = 0; i < ab.size(); ++i)
    CHECK(std::fabs(wrap_phase(ab[i] + ba[i])) < 1e-12);
}

TEST_CASE("feature assembly: dims, normalization, and constant-dim guard") {
  Rng rng(8);
  std::vector<double> x = testutil::random_vec(2000, rng);

  // single channel degenerates to the magnitude block
  Spectrogram s1 = stft(x, 256, 128, 16000);
  FeatureGrid mono = assemble_features({s1});
  CHECK(mono.dims == s1.bins);

  // seven channels at 129 bins
  std::vector<Spectrogram> specs7(7, s1);
  CHECK(assemble_features(specs7).dims == 903);

  for (int d = 0; d < mono.dims; ++d) {
    double mean = 0.0;
    for (int t = 0; t < mono.frames; ++t) mean += mono.at(t, d);
    mean /= mono.frames;
    double var = 0.0;
    for (int t = 0; t < mono.frames; ++t)
      var += (mono.at(t, d) - mean) * (mono.at(t, d) - mean);
    const double sd = std::sqrt(var / mono.frames);
    const bool all_zero = [&] {
      for (int t = 0; t < mono.frames; ++t)
        if (mono.at(t, d) != 0.0) return false;
      return true;
    }();
    CHECK((all_zero || (std::fabs(mean) < 1e-9 && std::fabs(sd - 1.0) < 1e-6)));
  }

  // silence in every channel: constant dims map to zeros without NaN
  std::vector<double> quiet(2000, 0.0);
  Spectrogram sq = stft(quiet, 256, 128, 16000);
  FeatureGrid silent = assemble_features({sq, sq});
  for (double v : silent.v) {
    CHECK(std::isfinite(v));
    CHECK(v == 0.0);
  }

  CHECK_THROWS_AS(assemble_features({}), ContractError);
}

TEST_CASE("normalization is idempotent on non-constant grids") {
  Rng rng(9);
  std::vector<double> x = testutil::random_vec(2200, rng);
  std::vector<double> y = testutil::random_vec(2200, rng);
  Spectrogram sx = stft(x, 256, 128, 16000);
  Spectrogram sy = stft(y, 256, 128, 16000);
  FeatureGrid grid = assemble_features({sx, sy});
  // re-normalizing the already normalized matrix moves nothing
  for (int d = 0; d < grid.dims; ++d) {
    double mean = 0.0, var = 0.0;
    for (int t = 0; t < grid.frames; ++t) mean += grid.at(t, d);
    mean /= grid.frames;
    for (int t = 0; t < grid.frames; ++t)
      var += (grid.at(t, d) - mean) * (grid.at(t, d) - mean);
    const double sd = std::sqrt(var / grid.frames);
    if (sd < 1e-12) continue;
    for (int t = 0; t < grid.frames; ++t) {
      const double renormed = (grid.at(t, d) - mean) / sd;
      CHECK(std::fabs(renormed - grid.at(t, d)) < 1e-9);
    }
  }
}

TEST_CASE("wav pcm16 and float32 round trips") {
  Rng rng(10);
  Audio audio;
  audio.sample_rate = 16000;
  audio.channels = {testutil::random_vec(500, rng, 0.2),
                    testutil::random_vec(500, rng, 0.2)};
  const std::string dir = testutil::temp_dir("wav");

  write_wav(dir + "/a16.wav", audio, 16);
  Audio r16 = read_wav(dir + "/a16.wav");
  CHECK(r16.sample_rate == 16000);
  REQUIRE(r16.num_channels() == 2);
  for (int c = 0; c < 2; ++c)
    for (size_t i = 0; i < 500; ++i)
      CHECK(std::fabs(r16.channels[static_cast<size_t>(c)][i] - audio.channels[static_cast<size_t>(c)][i]) <=
            1.0 / 32768.0 + 1e-9);

  write_wav(dir + "/a32.wav", audio, 32);
  Audio r32 = read_wav(dir + "/a32.wav");
  for (int c = 0; c < 2; ++c)
    for (size_t i = 0; i < 500; ++i)
      CHECK(r32.channels[static_cast<size_t>(c)][i] ==
            doctest::Approx(audio.channels[static_cast<size_t>(c)][i]).epsilon(1e-7));
}

TEST_CASE("raw f64 round trip is bit exact") {
  Rng rng(11);
  Audio audio;
  audio.sample_rate = 16000;
  audio.channels = {testutil::random_vec(333, rng), testutil::random_vec(333, rng),
                    testutil::random_vec(333, rng)};
  const std::string dir = testutil::temp_dir("raw");
  write_raw_f64(dir + "/x.raw", audio);
  Audio r = read_raw_f64(dir + "/x.raw");
  CHECK(r.sample_rate == audio.sample_rate);
  CHECK(r.channels == audio.channels);
  CHECK_THROWS_AS(read_raw_f64(dir + "/missing.raw"), DataError);
}
