// Copyright 2026 exsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

// Dense math kernels behind the tensor ops. Every kernel exists twice: a
// serial reference (`*_serial`) and an OpenMP version (`*_omp`) parallelized
// over output rows. Both compute each output element with the same inner-loop
// order, so results are bit-identical; tests enforce this. The unsuffixed
// entry points dispatch on the process-wide parallel switch.

#include <cstdint>

namespace exsep::kernels {

// Process-wide switch. Timing paths set this to false so measurements are
// single-threaded; training leaves it on.
void set_parallel(bool enabled);
bool parallel_enabled();
int max_threads();

// C (+)= A * B           A: m x k, B: k x n, C: m x n
void matmul_serial(const double* a, const double* b, double* c, int m, int k,
                   int n, bool accumulate);
void matmul_omp(const double* a, const double* b, double* c, int m, int k,
                int n, bool accumulate);
void matmul(const double* a, const double* b, double* c, int m, int k, int n,
            bool accumulate);

// C (+)= A * B^T         A: m x k, B: n x k, C: m x n
void matmul_nt_serial(const double* a, const double* b, double* c, int m,
                      int k, int n, bool accumulate);
void matmul_nt_omp(const double* a, const double* b, double* c, int m, int k,
                   int n, bool accumulate);
void matmul_nt(const double* a, const double* b, double* c, int m, int k,
               int n, bool accumulate);

// C (+)= A^T * B         A: k x m, B: k x n, C: m x n
void matmul_tn_serial(const double* a, const double* b, double* c, int m,
                      int k, int n, bool accumulate);
void matmul_tn_omp(const double* a, const double* b, double* c, int m, int k,
                   int n, bool accumulate);
void matmul_tn(const double* a, const double* b, double* c, int m, int k,
               int n, bool accumulate);

// Row-wise softmax with max subtraction. X, Y: rows x cols.
void softmax_rows_serial(const double* x, double* y, int rows, int cols);
void softmax_rows_omp(const double* x, double* y, int rows, int cols);
void softmax_rows(const double* x, double* y, int rows, int cols);

// Row-wise layer norm. Saves per-row mean and 1/sqrt(var+eps) for the
// backward pass when `mean`/`istd` are non-null.
void layer_norm_rows_serial(const double* x, const double* gain,
                            const double* bias, double eps, double* y,
                            double* mean, double* istd, int rows, int cols);
void layer_norm_rows_omp(const double* x, const double* gain,
                         const double* bias, double eps, double* y,
                         double* mean, double* istd, int rows, int cols);
void layer_norm_rows(const double* x, const double* gain, const double* bias,
                     double eps, double* y, double* mean, double* istd,
                     int rows, int cols);

// Relative-position attention scores.
// S[m,n] (+)= sum_d Q[m,d] * R[clip(m-n)+max_len-1, d]
// with clip(o) = clamp(o, -(max_len-1), max_len-1). Q: t x dk,
// R: (2*max_len-1) x dk, S: t x t.
void relpos_scores_serial(const double* q, const double* rel, double* s, int t,
                          int dk, int max_len, bool accumulate);
void relpos_scores_omp(const double* q, const double* rel, double* s, int t,
                       int dk, int max_len, bool accumulate);
void relpos_scores(const double* q, const double* rel, double* s, int t,
                   int dk, int max_len, bool accumulate);

// Backward of relpos_scores. dQ is parallelizable by row; the dR scatter is
// kept serial in both variants so accumulation order is fixed.
void relpos_backward_serial(const double* ds, const double* q,
                            const double* rel, double* dq, double* dr, int t,
                            int dk, int max_len);
void relpos_backward_omp(const double* ds, const double* q, const double* rel,
                         double* dq, double* dr, int t, int dk, int max_len);
void relpos_backward(const double* ds, const double* q, const double* rel,
                     double* dq, double* dr, int t, int dk, int max_len);

}  // namespace exsep::kernels
