// Copyright 2026 exsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "exsep/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace exsep {

GradCheckResult finite_diff_check(ParamSet& params,
                                  const std::function<Tensor()>& loss_fn,
                                  const GradCheckOptions& opts) {
  if (opts.step < 1e-7 || opts.step > 1e-3)
    throw ContractError("finite_diff_check: step must lie in [1e-7, 1e-3]");

  // analytic gradients
  params.zero_grad();
  {
    Tensor loss = loss_fn();
    backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& name : params.names()) analytic.push_back(params.at(name).grad());
  clear_tape();

  GradCheckResult result;
  Rng rng(opts.sample_seed);
  const double h = opts.step;

  for (size_t pi = 0; pi < params.names().size(); ++pi) {
    const std::string& name = params.names()[pi];
    Tensor& p = params.at(name);
    std::vector<double>& w = p.leaf_data();
    const long n = p.numel();

    std::vector<long> coords(static_cast<size_t>(n));
    std::iota(coords.begin(), coords.end(), 0);
    if (opts.max_coords_per_param > 0 && n > opts.max_coords_per_param) {
      // Fisher-Yates prefix shuffle, deterministic per seed
      for (long i = 0; i < opts.max_coords_per_param; ++i) {
        const long j = i + static_cast<long>(rng.uniform_index(
                               static_cast<uint64_t>(n - i)));
        std::swap(coords[static_cast<size_t>(i)], coords[static_cast<size_t>(j)]);
      }
      coords.resize(static_cast<size_t>(opts.max_coords_per_param));
    }

    for (long c : coords) {
      const double orig = w[static_cast<size_t>(c)];
      w[static_cast<size_t>(c)] = orig + h;
      const double f_plus = loss_fn().item();
      clear_tape();
      w[static_cast<size_t>(c)] = orig - h;
      const double f_minus = loss_fn().item();
      clear_tape();
      w[static_cast<size_t>(c)] = orig;

      const double numeric = (f_plus - f_minus) / (2.0 * h);
      const double exact = analytic[pi][static_cast<size_t>(c)];
      const double denom = std::max({std::fabs(numeric), std::fabs(exact), 1e-8});
      const double rel = std::fabs(numeric - exact) / denom;
      ++result.coords_checked;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = name;
        result.worst_index = c;
      }
    }
  }
  return result;
}

}  // namespace exsep
