// Copyright 2026 exsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// The OpenMP kernels split work by output row and keep every inner loop in
// the same order as the serial reference, so outputs must be bit-identical.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <vector>

#include "exsep/kernels.hpp"
#include "test_util.hpp"

using namespace exsep;

namespace {

struct Dims {
  int m, k, n;
};

const std::vector<Dims> kShapes = {{1, 1, 1},   {3, 5, 7},    {17, 16, 33},
                                   {64, 64, 64}, {100, 387, 64}, {129, 7, 129}};

}  // namespace

TEST_CASE("matmul family: omp output is bit-identical to serial") {
  Rng rng(101);
  for (const Dims d : kShapes) {
    for (const bool accumulate : {false, true}) {
      auto a = testutil::random_vec(static_cast<size_t>(d.m) * d.k, rng);
      auto b = testutil::random_vec(static_cast<size_t>(d.k) * d.n, rng);
      auto base = testutil::random_vec(static_cast<size_t>(d.m) * d.n, rng);
      auto c1 = base, c2 = base;
      kernels::matmul_serial(a.data(), b.data(), c1.data(), d.m, d.k, d.n, accumulate);
      kernels::matmul_omp(a.data(), b.data(), c2.data(), d.m, d.k, d.n, accumulate);
      CHECK(c1 == c2);

      auto bt = testutil::random_vec(static_cast<size_t>(d.n) * d.k, rng);
      c1 = base;
      c2 = base;
      kernels::matmul_nt_serial(a.data(), bt.data(), c1.data(), d.m, d.k, d.n, accumulate);
      kernels::matmul_nt_omp(a.data(), bt.data(), c2.data(), d.m, d.k, d.n, accumulate);
      CHECK(c1 == c2);

      auto at = testutil::random_vec(static_cast<size_t>(d.k) * d.m, rng);
      c1 = base;
      c2 = base;
      kernels::matmul_tn_serial(at.data(), b.data(), c1.data(), d.m, d.k, d.n, accumulate);
      kernels::matmul_tn_omp(at.data(), b.data(), c2.data(), d.m, d.k, d.n, accumulate);
      CHECK(c1 == c2);
    }
  }
}

TEST_CASE("matmul_nt and matmul_tn agree with explicit transposition") {
  Rng rng(103);
  const int m = 9, k = 5, n = 8;
  auto a = testutil::random_vec(static_cast<size_t>(m) * k, rng);
  auto b = testutil::random_vec(static_cast<size_t>(k) * n, rng);

  std::vector<double> bt(static_cast<size_t>(n) * k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < n; ++j) bt[static_cast<size_t>(j) * k + i] = b[static_cast<size_t>(i) * n + j];
  std::vector<double> c_ref(static_cast<size_t>(m) * n), c_nt(c_ref.size());
  kernels::matmul_serial(a.data(), b.data(), c_ref.data(), m, k, n, false);
  kernels::matmul_nt_serial(a.data(), bt.data(), c_nt.data(), m, k, n, false);
  for (size_t i = 0; i < c_ref.size(); ++i)
    CHECK(c_nt[i] == doctest::Approx(c_ref[i]).epsilon(1e-13));

  std::vector<double> at(static_cast<size_t>(k) * m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < k; ++j) at[static_cast<size_t>(j) * m + i] = a[static_cast<size_t>(i) * k + j];
  std::vector<double> c_tn(c_ref.size());
  kernels::matmul_tn_serial(at.data(), b.data(), c_tn.data(), m, k, n, false);
  for (size_t i = 0; i < c_ref.size(); ++i)
    CHECK(c_tn[i] == doctest::Approx(c_ref[i]).epsilon(1e-13));
}

TEST_CASE("softmax and layer_norm rows: omp equals serial bitwise") {
  Rng rng(107);
  for (const auto [rows, cols] : std::vector<std::pair<int, int>>{{1, 1}, {7, 13}, {50, 200}}) {
    auto x = testutil::random_vec(static_cast<size_t>(rows) * cols, rng, 4.0);
    std::vector<double> y1(x.size()), y2(x.size());
    kernels::softmax_rows_serial(x.data(), y1.data(), rows, cols);
    kernels::softmax_rows_omp(x.data(), y2.data(), rows, cols);
    CHECK(y1 == y2);

    auto gain = testutil::random_vec(static_cast<size_t>(cols), rng);
    auto bias = testutil::random_vec(static_cast<size_t>(cols), rng);
    std::vector<double> m1(static_cast<size_t>(rows)), m2(m1), s1(m1), s2(m1);
    kernels::layer_norm_rows_serial(x.data(), gain.data(), bias.data(), 1e-5,
                                    y1.data(), m1.data(), s1.data(), rows, cols);
    kernels::layer_norm_rows_omp(x.data(), gain.data(), bias.data(), 1e-5,
                                 y2.data(), m2.data(), s2.data(), rows, cols);
    CHECK(y1 == y2);
    CHECK(m1 == m2);
    CHECK(s1 == s2);
  }
}

TEST_CASE("relpos kernels: omp equals serial bitwise, including the dR scatter") {
  Rng rng(109);
  const int t = 23, dk = 8, max_len = 16;
  auto q = testutil::random_vec(static_cast<size_t>(t) * dk, rng);
  auto rel = testutil::random_vec(static_cast<size_t>(2 * max_len - 1) * dk, rng);
  std::vector<double> s1(static_cast<size_t>(t) * t), s2(s1.size());
  kernels::relpos_scores_serial(q.data(), rel.data(), s1.data(), t, dk, max_len, false);
  kernels::relpos_scores_omp(q.data(), rel.data(), s2.data(), t, dk, max_len, false);
  CHECK(s1 == s2);

  auto ds = testutil::random_vec(s1.size(), rng);
  std::vector<double> dq1(q.size(), 0.1), dq2(q.size(), 0.1);
  std::vector<double> dr1(rel.size(), -0.2), dr2(rel.size(), -0.2);
  kernels::relpos_backward_serial(ds.data(), q.data(), rel.data(), dq1.data(),
                                  dr1.data(), t, dk, max_len);
  kernels::relpos_backward_omp(ds.data(), q.data(), rel.data(), dq2.data(),
                               dr2.data(), t, dk, max_len);
  CHECK(dq1 == dq2);
  CHECK(dr1 == dr2);
}

TEST_CASE("offsets beyond the table clamp to the extreme entries") {
  Rng rng(113);
  const int t = 9, dk = 4, max_len = 3;  // offsets range over -8..8, table covers -2..2
  auto q = testutil::random_vec(static_cast<size_t>(t) * dk, rng);
  auto rel = testutil::random_vec(static_cast<size_t>(2 * max_len - 1) * dk, rng);
  std::vector<double> s(static_cast<size_t>(t) * t);
  kernels::relpos_scores_serial(q.data(), rel.data(), s.data(), t, dk, max_len, false);
  // all offsets >= max_len-1 share the last table row
  for (int m = max_len - 1; m < t; ++m) {
    double expect = 0.0;
    for (int d = 0; d < dk; ++d)
      expect += q[static_cast<size_t>(m) * dk + d] *
                rel[static_cast<size_t>(2 * max_len - 2) * dk + d];
    CHECK(s[static_cast<size_t>(m) * t + 0] == doctest::Approx(expect).epsilon(1e-14));
  }
}

TEST_CASE("dispatch honors the parallel switch") {
  const bool before = kernels::parallel_enabled();
  kernels::set_parallel(false);
  CHECK(!kernels::parallel_enabled());
  Rng rng(127);
  const int m = 150, k = 200, n = 150;  // above the dispatch cutoff
  auto a = testutil::random_vec(static_cast<size_t>(m) * k, rng);
  auto b = testutil::random_vec(static_cast<size_t>(k) * n, rng);
  std::vector<double> c1(static_cast<size_t>(m) * n), c2(c1.size());
  kernels::matmul(a.data(), b.data(), c1.data(), m, k, n, false);
  kernels::set_parallel(true);
  kernels::matmul(a.data(), b.data(), c2.data(), m, k, n, false);
  CHECK(c1 == c2);
  kernels::set_parallel(before);
}
