// Copyright 2026 exsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

// STFT analysis/synthesis with a sqrt-Hann window pair and multi-channel
// feature assembly: magnitude of channel 1 concatenated with the phase
// difference of every other channel against channel 1, each feature dimension
// z-normalized along the time axis.

#include <complex>
#include <span>
#include <vector>

#include "exsep/common.hpp"

namespace exsep {

// Radix-2 complex FFT, iterative, power-of-two sizes.
class Fft {
 public:
  explicit Fft(int n);
  int size() const { return n_; }
  void forward(std::complex<double>* x) const;
  void inverse(std::complex<double>* x) const;  // includes 1/n

 private:
  void transform(std::complex<double>* x, bool invert) const;
  int n_;
  std::vector<std::complex<double>> twiddle_;
  std::vector<int> bitrev_;
};

// Single-channel complex spectrogram. bins = n_fft/2 + 1,
// frames = floor((len - n_fft)/hop) + 1.
struct Spectrogram {
  int frames = 0;
  int bins = 0;
  int n_fft = 0;
  int hop = 0;
  int sample_rate = 0;
  std::vector<std::complex<double>> v;  // frames x bins, row-major

  std::complex<double>& at(int t, int f) {
    return v[static_cast<size_t>(t) * bins + static_cast<size_t>(f)];
  }
  std::complex<double> at(int t, int f) const {
    return v[static_cast<size_t>(t) * bins + static_cast<size_t>(f)];
  }
};

std::vector<double> sqrt_hann_window(int n);

Spectrogram stft(std::span<const double> signal, int n_fft, int hop,
                 int sample_rate);
std::vector<double> istft(const Spectrogram& spec);

// Phase difference channel i minus channel 1, wrapped to (-pi, pi].
std::vector<double> ipd(const Spectrogram& spec_i, const Spectrogram& spec_1);

double wrap_phase(double x);

// T x D feature matrix, D = C * bins. Block 0 is |channel 1|, blocks
// 1..C-1 are phase differences. Per-dim stats from the z-normalization.
struct FeatureGrid {
  int frames = 0;
  int dims = 0;
  std::vector<double> v;  // frames x dims
  std::vector<double> mean;
  std::vector<double> std;

  double at(int t, int d) const {
    return v[static_cast<size_t>(t) * dims + static_cast<size_t>(d)];
  }
};

FeatureGrid assemble_features(const std::vector<Spectrogram>& channels);
// Same, over the frame range [t0, t1); normalization uses only that range.
FeatureGrid assemble_features(const std::vector<Spectrogram>& channels, int t0,
                              int t1);

}  // namespace exsep
