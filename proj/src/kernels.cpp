// Copyright 2026 exsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "exsep/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace exsep::kernels {

namespace {
std::atomic<bool> g_parallel{true};

// Skip thread spawn below this many inner-loop multiply-adds; for smaller
// kernels the fork/join overhead beats the gain.
constexpr long kParallelCutoff = 4 * 1024 * 1024;

inline bool use_omp(long work) {
#ifdef _OPENMP
  return g_parallel.load(std::memory_order_relaxed) && work >= kParallelCutoff;
#else
  (void)work;
  return false;
#endif
}
}  // namespace

void set_parallel(bool enabled) {
  g_parallel.store(enabled, std::memory_order_relaxed);
}

bool parallel_enabled() { return g_parallel.load(std::memory_order_relaxed); }

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

// ---------------------------------------------------------------------------
// matmul: C (+)= A * B

namespace {
inline void matmul_row(const double* a, const double* b, double* c, int k,
                       int n, bool accumulate) {
  if (!accumulate) std::memset(c, 0, sizeof(double) * static_cast<size_t>(n));
  for (int p = 0; p < k; ++p) {
    const double av = a[p];
    const double* brow = b + static_cast<size_t>(p) * n;
    for (int j = 0; j < n; ++j) c[j] += av * brow[j];
  }
}
}  // namespace

void matmul_serial(const double* a, const double* b, double* c, int m, int k,
                   int n, bool accumulate) {
  for (int i = 0; i < m; ++i)
    matmul_row(a + static_cast<size_t>(i) * k, b,
               c + static_cast<size_t>(i) * n, k, n, accumulate);
}

void matmul_omp(const double* a, const double* b, double* c, int m, int k,
                int n, bool accumulate) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i)
    matmul_row(a + static_cast<size_t>(i) * k, b,
               c + static_cast<size_t>(i) * n, k, n, accumulate);
}

void matmul(const double* a, const double* b, double* c, int m, int k, int n,
            bool accumulate) {
  if (use_omp(static_cast<long>(m) * k * n))
    matmul_omp(a, b, c, m, k, n, accumulate);
  else
    matmul_serial(a, b, c, m, k, n, accumulate);
}

// ---------------------------------------------------------------------------
// matmul_nt: C (+)= A * B^T

namespace {
inline void matmul_nt_row(const double* arow, const double* b, double* crow,
                          int k, int n, bool accumulate) {
  for (int j = 0; j < n; ++j) {
    const double* brow = b + static_cast<size_t>(j) * k;
    double acc = 0.0;
    for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
    crow[j] = accumulate ? crow[j] + acc : acc;
  }
}
}  // namespace

void matmul_nt_serial(const double* a, const double* b, double* c, int m,
                      int k, int n, bool accumulate) {
  for (int i = 0; i < m; ++i)
    matmul_nt_row(a + static_cast<size_t>(i) * k, b,
                  c + static_cast<size_t>(i) * n, k, n, accumulate);
}

void matmul_nt_omp(const double* a, const double* b, double* c, int m, int k,
                   int n, bool accumulate) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i)
    matmul_nt_row(a + static_cast<size_t>(i) * k, b,
                  c + static_cast<size_t>(i) * n, k, n, accumulate);
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k,
               int n, bool accumulate) {
  if (use_omp(static_cast<long>(m) * k * n))
    matmul_nt_omp(a, b, c, m, k, n, accumulate);
  else
    matmul_nt_serial(a, b, c, m, k, n, accumulate);
}

// ---------------------------------------------------------------------------
// matmul_tn: C (+)= A^T * B

namespace {
inline void matmul_tn_row(const double* a, const double* b, double* crow,
                          int i, int k, int m, int n, bool accumulate) {
  if (!accumulate)
    std::memset(crow, 0, sizeof(double) * static_cast<size_t>(n));
  for (int p = 0; p < k; ++p) {
    const double av = a[static_cast<size_t>(p) * m + i];
    const double* brow = b + static_cast<size_t>(p) * n;
    for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}
}  // namespace

void matmul_tn_serial(const double* a, const double* b, double* c, int m,
                      int k, int n, bool accumulate) {
  for (int i = 0; i < m; ++i)
    matmul_tn_row(a, b, c + static_cast<size_t>(i) * n, i, k, m, n,
                  accumulate);
}

void matmul_tn_omp(const double* a, const double* b, double* c, int m, int k,
                   int n, bool accumulate) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i)
    matmul_tn_row(a, b, c + static_cast<size_t>(i) * n, i, k, m, n,
                  accumulate);
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k,
               int n, bool accumulate) {
  if (use_omp(static_cast<long>(m) * k * n))
    matmul_tn_omp(a, b, c, m, k, n, accumulate);
  else
    matmul_tn_serial(a, b, c, m, k, n, accumulate);
}

// ---------------------------------------------------------------------------
// softmax rows

namespace {
inline void softmax_row(const double* x, double* y, int cols) {
  double mx = x[0];
  for (int j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
  double sum = 0.0;
  for (int j = 0; j < cols; ++j) {
    y[j] = std::exp(x[j] - mx);
    sum += y[j];
  }
  const double inv = 1.0 / sum;
  for (int j = 0; j < cols; ++j) y[j] *= inv;
}
}  // namespace

void softmax_rows_serial(const double* x, double* y, int rows, int cols) {
  for (int i = 0; i < rows; ++i)
    softmax_row(x + static_cast<size_t>(i) * cols,
                y + static_cast<size_t>(i) * cols, cols);
}

void softmax_rows_omp(const double* x, double* y, int rows, int cols) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < rows; ++i)
    softmax_row(x + static_cast<size_t>(i) * cols,
                y + static_cast<size_t>(i) * cols, cols);
}

void softmax_rows(const double* x, double* y, int rows, int cols) {
  if (use_omp(static_cast<long>(rows) * cols * 8))
    softmax_rows_omp(x, y, rows, cols);
  else
    softmax_rows_serial(x, y, rows, cols);
}

// ---------------------------------------------------------------------------
// layer norm rows

namespace {
inline void layer_norm_row(const double* x, const double* gain,
                           const double* bias, double eps, double* y,
                           double* mean, double* istd, int cols) {
  double mu = 0.0;
  for (int j = 0; j < cols; ++j) mu += x[j];
  mu /= cols;
  double var = 0.0;
  for (int j = 0; j < cols; ++j) {
    const double d = x[j] - mu;
    var += d * d;
  }
  var /= cols;
  const double is = 1.0 / std::sqrt(var + eps);
  for (int j = 0; j < cols; ++j)
    y[j] = (x[j] - mu) * is * gain[j] + bias[j];
  if (mean) *mean = mu;
  if (istd) *istd = is;
}
}  // namespace

void layer_norm_rows_serial(const double* x, const double* gain,
                            const double* bias, double eps, double* y,
                            double* mean, double* istd, int rows, int cols) {
  for (int i = 0; i < rows; ++i)
    layer_norm_row(x + static_cast<size_t>(i) * cols, gain, bias, eps,
                   y + static_cast<size_t>(i) * cols, mean ? mean + i : nullptr,
                   istd ? istd + i : nullptr, cols);
}

void layer_norm_rows_omp(const double* x, const double* gain,
                         const double* bias, double eps, double* y,
                         double* mean, double* istd, int rows, int cols) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < rows; ++i)
    layer_norm_row(x + static_cast<size_t>(i) * cols, gain, bias, eps,
                   y + static_cast<size_t>(i) * cols, mean ? mean + i : nullptr,
                   istd ? istd + i : nullptr, cols);
}

void layer_norm_rows(const double* x, const double* gain, const double* bias,
                     double eps, double* y, double* mean, double* istd,
                     int rows, int cols) {
  if (use_omp(static_cast<long>(rows) * cols * 8))
    layer_norm_rows_omp(x, gain, bias, eps, y, mean, istd, rows, cols);
  else
    layer_norm_rows_serial(x, gain, bias, eps, y, mean, istd, rows, cols);
}

// ---------------------------------------------------------------------------
// relative-position scores

namespace {
inline int clip_offset(int off, int max_len) {
  return std::clamp(off, -(max_len - 1), max_len - 1) + (max_len - 1);
}

inline void relpos_row(const double* qrow, const double* rel, double* srow,
                       int m, int t, int dk, int max_len, bool accumulate) {
  for (int n = 0; n < t; ++n) {
    const double* r = rel + static_cast<size_t>(clip_offset(m - n, max_len)) * dk;
    double acc = 0.0;
    for (int d = 0; d < dk; ++d) acc += qrow[d] * r[d];
    srow[n] = accumulate ? srow[n] + acc : acc;
  }
}
}  // namespace

void relpos_scores_serial(const double* q, const double* rel, double* s, int t,
                          int dk, int max_len, bool accumulate) {
  for (int m = 0; m < t; ++m)
    relpos_row(q + static_cast<size_t>(m) * dk, rel,
               s + static_cast<size_t>(m) * t, m, t, dk, max_len, accumulate);
}

void relpos_scores_omp(const double* q, const double* rel, double* s, int t,
                       int dk, int max_len, bool accumulate) {
#pragma omp parallel for schedule(static)
  for (int m = 0; m < t; ++m)
    relpos_row(q + static_cast<size_t>(m) * dk, rel,
               s + static_cast<size_t>(m) * t, m, t, dk, max_len, accumulate);
}

void relpos_scores(const double* q, const double* rel, double* s, int t,
                   int dk, int max_len, bool accumulate) {
  if (use_omp(static_cast<long>(t) * t * dk))
    relpos_scores_omp(q, rel, s, t, dk, max_len, accumulate);
  else
    relpos_scores_serial(q, rel, s, t, dk, max_len, accumulate);
}

namespace {
inline void relpos_dq_row(const double* dsrow, const double* rel, double* dqrow,
                          int m, int t, int dk, int max_len) {
  for (int n = 0; n < t; ++n) {
    const double g = dsrow[n];
    if (g == 0.0) continue;
    const double* r = rel + static_cast<size_t>(clip_offset(m - n, max_len)) * dk;
    for (int d = 0; d < dk; ++d) dqrow[d] += g * r[d];
  }
}
}  // namespace

void relpos_backward_serial(const double* ds, const double* q,
                            const double* rel, double* dq, double* dr, int t,
                            int dk, int max_len) {
  for (int m = 0; m < t; ++m)
    relpos_dq_row(ds + static_cast<size_t>(m) * t, rel,
                  dq + static_cast<size_t>(m) * dk, m, t, dk, max_len);
  // dR scatter stays serial: several (m,n) pairs map to one clipped slot.
  for (int m = 0; m < t; ++m) {
    const double* qrow = q + static_cast<size_t>(m) * dk;
    const double* dsrow = ds + static_cast<size_t>(m) * t;
    for (int n = 0; n < t; ++n) {
      const double g = dsrow[n];
      if (g == 0.0) continue;
      double* r = dr + static_cast<size_t>(clip_offset(m - n, max_len)) * dk;
      for (int d = 0; d < dk; ++d) r[d] += g * qrow[d];
    }
  }
}

void relpos_backward_omp(const double* ds, const double* q, const double* rel,
                         double* dq, double* dr, int t, int dk, int max_len) {
#pragma omp parallel for schedule(static)
  for (int m = 0; m < t; ++m)
    relpos_dq_row(ds + static_cast<size_t>(m) * t, rel,
                  dq + static_cast<size_t>(m) * dk, m, t, dk, max_len);
  for (int m = 0; m < t; ++m) {
    const double* qrow = q + static_cast<size_t>(m) * dk;
    const double* dsrow = ds + static_cast<size_t>(m) * t;
    for (int n = 0; n < t; ++n) {
      const double g = dsrow[n];
      if (g == 0.0) continue;
      double* r = dr + static_cast<size_t>(clip_offset(m - n, max_len)) * dk;
      for (int d = 0; d < dk; ++d) r[d] += g * qrow[d];
    }
  }
}

void relpos_backward(const double* ds, const double* q, const double* rel,
                     double* dq, double* dr, int t, int dk, int max_len) {
  if (use_omp(static_cast<long>(t) * t * dk))
    relpos_backward_omp(ds, q, rel, dq, dr, t, dk, max_len);
  else
    relpos_backward_serial(ds, q, rel, dq, dr, t, dk, max_len);
}

}  // namespace exsep::kernels
