// Copyright 2026 exsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "exsep/signal.hpp"

#include <cmath>

namespace exsep {

namespace {
bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }
}  // namespace

Fft::Fft(int n) : n_(n) {
  if (!is_pow2(n)) throw ContractError("Fft: size must be a power of two");
  twiddle_.resize(static_cast<size_t>(n) / 2);
  for (int k = 0; k < n / 2; ++k) {
    const double a = -2.0 * kPi * k / n;
    twiddle_[static_cast<size_t>(k)] = {std::cos(a), std::sin(a)};
  }
  bitrev_.resize(static_cast<size_t>(n));
  int bits = 0;
  while ((1 << bits) < n) ++bits;
  for (int i = 0; i < n; ++i) {
    int r = 0;
    for (int b = 0; b < bits; ++b)
      if (i & (1 << b)) r |= 1 << (bits - 1 - b);
    bitrev_[static_cast<size_t>(i)] = r;
  }
}

void Fft::transform(std::complex<double>* x, bool invert) const {
  for (int i = 0; i < n_; ++i) {
    const int j = bitrev_[static_cast<size_t>(i)];
    if (i < j) std::swap(x[i], x[j]);
  }
  for (int len = 2; len <= n_; len <<= 1) {
    const int half = len >> 1;
    const int stride = n_ / len;
    for (int start = 0; start < n_; start += len) {
      for (int k = 0; k < half; ++k) {
        std::complex<double> w = twiddle_[static_cast<size_t>(k) * stride];
        if (invert) w = std::conj(w);
        const std::complex<double> u = x[start + k];
        const std::complex<double> t = w * x[start + k + half];
        x[start + k] = u + t;
        x[start + k + half] = u - t;
      }
    }
  }
}

void Fft::forward(std::complex<double>* x) const { transform(x, false); }

void Fft::inverse(std::complex<double>* x) const {
  transform(x, true);
  const double inv = 1.0 / n_;
  for (int i = 0; i < n_; ++i) x[i] *= inv;
}

std::vector<double> sqrt_hann_window(int n) {
  std::vector<double> w(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    w[static_cast<size_t>(i)] =
        std::sqrt(0.5 * (1.0 - std::cos(2.0 * kPi * i / n)));
  return w;
}

Spectrogram stft(std::span<const double> signal, int n_fft, int hop,
                 int sample_rate) {
  if (!is_pow2(n_fft)) throw ContractError("stft: window size must be a power of two");
  if (hop <= 0 || hop > n_fft) throw ContractError("stft: need 0 < hop <= window");
  const long len = static_cast<long>(signal.size());
  if (len < n_fft)
    throw DataError("stft: signal too short (" + std::to_string(len) +
                    " samples, window " + std::to_string(n_fft) + ")");
  const int frames = static_cast<int>((len - n_fft) / hop) + 1;
  const int bins = n_fft / 2 + 1;

  Spectrogram spec;
  spec.frames = frames;
  spec.bins = bins;
  spec.n_fft = n_fft;
  spec.hop = hop;
  spec.sample_rate = sample_rate;
  spec.v.resize(static_cast<size_t>(frames) * bins);

  const Fft fft(n_fft);
  const std::vector<double> window = sqrt_hann_window(n_fft);
  std::vector<std::complex<double>> buf(static_cast<size_t>(n_fft));
  for (int t = 0; t < frames; ++t) {
    const double* s = signal.data() + static_cast<size_t>(t) * hop;
    for (int i = 0; i < n_fft; ++i)
      buf[static_cast<size_t>(i)] = {s[i] * window[static_cast<size_t>(i)], 0.0};
    fft.forward(buf.data());
    for (int f = 0; f < bins; ++f) spec.at(t, f) = buf[static_cast<size_t>(f)];
  }
  return spec;
}

std::vector<double> istft(const Spectrogram& spec) {
  const int n_fft = spec.n_fft;
  const int hop = spec.hop;
  if (!is_pow2(n_fft) || hop <= 0 || hop > n_fft ||
      spec.bins != n_fft / 2 + 1)
    throw DataError("istft: inconsistent spectrogram metadata");
  const int frames = spec.frames;
  const long out_len = static_cast<long>(frames - 1) * hop + n_fft;

  std::vector<double> out(static_cast<size_t>(out_len), 0.0);
  std::vector<double> norm(static_cast<size_t>(out_len), 0.0);
  const Fft fft(n_fft);
  const std::vector<double> window = sqrt_hann_window(n_fft);
  std::vector<std::complex<double>> buf(static_cast<size_t>(n_fft));

  for (int t = 0; t < frames; ++t) {
    for (int f = 0; f < spec.bins; ++f) buf[static_cast<size_t>(f)] = spec.at(t, f);
    for (int f = spec.bins; f < n_fft; ++f)
      buf[static_cast<size_t>(f)] = std::conj(spec.at(t, n_fft - f));
    fft.inverse(buf.data());
    double* o = out.data() + static_cast<size_t>(t) * hop;
    double* nz = norm.data() + static_cast<size_t>(t) * hop;
    for (int i = 0; i < n_fft; ++i) {
      const double w = window[static_cast<size_t>(i)];
      o[i] += buf[static_cast<size_t>(i)].real() * w;
      nz[i] += w * w;
    }
  }
  for (long i = 0; i < out_len; ++i) {
    const double d = norm[static_cast<size_t>(i)];
    if (d > 1e-12) out[static_cast<size_t>(i)] /= d;
  }
  return out;
}

double wrap_phase(double x) {
  double y = std::remainder(x, 2.0 * kPi);
  if (y <= -kPi) y += 2.0 * kPi;
  return y;
}

std::vector<double> ipd(const Spectrogram& spec_i, const Spectrogram& spec_1) {
  if (spec_i.frames != spec_1.frames || spec_i.bins != spec_1.bins)
    throw ContractError("ipd: spectrogram shapes disagree");
  std::vector<double> out(static_cast<size_t>(spec_i.frames) * spec_i.bins);
  for (int t = 0; t < spec_i.frames; ++t)
    for (int f = 0; f < spec_i.bins; ++f) {
      const double a = std::arg(spec_i.at(t, f));
      const double b = std::arg(spec_1.at(t, f));
      out[static_cast<size_t>(t) * spec_i.bins + static_cast<size_t>(f)] =
          wrap_phase(a - b);
    }
  return out;
}

FeatureGrid assemble_features(const std::vector<Spectrogram>& channels) {
  if (channels.empty()) throw ContractError("assemble_features: no channels");
  return assemble_features(channels, 0, channels[0].frames);
}

FeatureGrid assemble_features(const std::vector<Spectrogram>& channels, int t0,
                              int t1) {
  if (channels.empty()) throw ContractError("assemble_features: no channels");
  const int c_count = static_cast<int>(channels.size());
  const int frames_total = channels[0].frames;
  const int bins = channels[0].bins;
  for (const Spectrogram& s : channels)
    if (s.frames != frames_total || s.bins != bins)
      throw ContractError("assemble_features: channel shapes disagree");
  if (t0 < 0 || t1 > frames_total || t0 >= t1)
    throw ContractError("assemble_features: bad frame range");

  const int frames = t1 - t0;
  const int dims = c_count * bins;
  FeatureGrid grid;
  grid.frames = frames;
  grid.dims = dims;
  grid.v.resize(static_cast<size_t>(frames) * dims);

  for (int t = 0; t < frames; ++t) {
    double* row = grid.v.data() + static_cast<size_t>(t) * dims;
    for (int f = 0; f < bins; ++f) row[f] = std::abs(channels[0].at(t0 + t, f));
    for (int c = 1; c < c_count; ++c) {
      const Spectrogram& sc = channels[static_cast<size_t>(c)];
      double* block = row + static_cast<size_t>(c) * bins;
      for (int f = 0; f < bins; ++f) {
        const double a = std::arg(sc.at(t0 + t, f));
        const double b = std::arg(channels[0].at(t0 + t, f));
        block[f] = wrap_phase(a - b);
      }
    }
  }

  // z-normalize each dim over the time axis; constant dims map to zero
  grid.mean.assign(static_cast<size_t>(dims), 0.0);
  grid.std.assign(static_cast<size_t>(dims), 0.0);
  for (int d = 0; d < dims; ++d) {
    double mu = 0.0;
    for (int t = 0; t < frames; ++t) mu += grid.at(t, d);
    mu /= frames;
    double var = 0.0;
    for (int t = 0; t < frames; ++t) {
      const double x = grid.at(t, d) - mu;
      var += x * x;
    }
    var /= frames;
    const double sd = std::sqrt(var);
    grid.mean[static_cast<size_t>(d)] = mu;
    grid.std[static_cast<size_t>(d)] = sd;
    double* col = grid.v.data() + static_cast<size_t>(d);
    if (sd < 1e-12) {
      for (int t = 0; t < frames; ++t) col[static_cast<size_t>(t) * dims] = 0.0;
    } else {
      const double inv = 1.0 / sd;
      for (int t = 0; t < frames; ++t)
        col[static_cast<size_t>(t) * dims] =
            (col[static_cast<size_t>(t) * dims] - mu) * inv;
    }
  }
  return grid;
}

}  // namespace exsep
