// Copyright 2026 exsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <functional>
#include <string>

#include "exsep/common.hpp"
#include "exsep/tensor.hpp"

namespace exsep {

struct GradCheckOptions {
  double step = 1e-5;              // must lie in [1e-7, 1e-3]
  long max_coords_per_param = 0;   // 0 = all coordinates
  uint64_t sample_seed = 0;        // used when sampling coordinates
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  long worst_index = -1;
  long coords_checked = 0;
};

// Compares backward() gradients of `loss_fn` against central finite
// differences, parameter scalar by parameter scalar. `loss_fn` must rebuild
// its graph on every call and return a scalar. Relative error uses
// max(|analytic|, |numeric|, 1e-8) as denominator.
GradCheckResult finite_diff_check(ParamSet& params,
                                  const std::function<Tensor()>& loss_fn,
                                  const GradCheckOptions& opts = {});

}  // namespace exsep
