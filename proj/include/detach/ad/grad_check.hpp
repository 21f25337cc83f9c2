#pragma once

#include <functional>
#include <string>

#include "detach/ad/graph.hpp"
#include "detach/ad/param_tree.hpp"

namespace detach::ad {

struct GradCheckResult {
  double max_rel_error = 0.0;
  bool ok = true;  // false when a forward evaluation produced NaN/inf
  std::string message;
};

// Central-difference check of d f / d x for a scalar-valued f. The error per
// coordinate is |analytic - numeric| / max(1, |analytic|).
using ScalarFn = std::function<Var(Graph&, Var)>;
GradCheckResult grad_check(const ScalarFn& f, const Tensor& x, double eps = 1e-6);

// Same check over every coordinate of every unfrozen parameter in `tree`.
// `stride` > 1 samples every stride-th coordinate of large parameters.
using ParamFn = std::function<Var(Graph&, ParamTree&)>;
GradCheckResult grad_check_params(const ParamFn& f, ParamTree& tree, double eps = 1e-6,
                                  std::size_t stride = 1);

}  // namespace detach::ad
