#include "detach/ad/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace detach::ad {
namespace {

double eval_scalar(const ScalarFn& f, const Tensor& x) {
  Graph g(false);
  Var in = g.constant(x);
  return f(g, in).value().item();
}

double eval_params(const ParamFn& f, ParamTree& tree) {
  Graph g(false);
  return f(g, tree).value().item();
}

void check_eps(double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) throw std::invalid_argument("grad_check: eps must lie in [1e-7, 1e-3]");
}

double rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& f, const Tensor& x, double eps) {
  check_eps(eps);
  GradCheckResult r;
  Graph g;
  Var in = g.leaf(x);
  Var out = f(g, in);
  if (!std::isfinite(out.value().item())) {
    r.ok = false;
    r.message = "non-finite forward value";
    return r;
  }
  g.backward(out);
  const Tensor analytic = g.grad(in);
  Tensor probe = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    probe[i] = x[i] + eps;
    const double fp = eval_scalar(f, probe);
    probe[i] = x[i] - eps;
    const double fm = eval_scalar(f, probe);
    probe[i] = x[i];
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      r.ok = false;
      r.message = "non-finite forward value at coordinate " + std::to_string(i);
      return r;
    }
    r.max_rel_error = std::max(r.max_rel_error, rel_err(analytic[i], (fp - fm) / (2.0 * eps)));
  }
  return r;
}

GradCheckResult grad_check_params(const ParamFn& f, ParamTree& tree, double eps, std::size_t stride) {
  check_eps(eps);
  stride = std::max<std::size_t>(stride, 1);
  GradCheckResult r;
  tree.zero_grad();
  {
    Graph g;
    Var out = f(g, tree);
    if (!std::isfinite(out.value().item())) {
      r.ok = false;
      r.message = "non-finite forward value";
      return r;
    }
    g.backward(out);
  }
  for (Parameter* p : tree.all()) {
    if (tree.frozen(*p)) continue;
    for (std::size_t i = 0; i < p->value.numel(); i += stride) {
      const double x0 = p->value[i];
      p->value[i] = x0 + eps;
      const double fp = eval_params(f, tree);
      p->value[i] = x0 - eps;
      const double fm = eval_params(f, tree);
      p->value[i] = x0;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        r.ok = false;
        r.message = "non-finite forward value perturbing " + p->name;
        return r;
      }
      const double e = rel_err(p->grad[i], (fp - fm) / (2.0 * eps));
      if (e > r.max_rel_error) {
        r.max_rel_error = e;
        r.message = "worst at " + p->name + "[" + std::to_string(i) + "]";
      }
    }
  }
  tree.zero_grad();
  return r;
}

}  // namespace detach::ad
