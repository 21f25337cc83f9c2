#include "detach/train/adam.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace detach::train {

void AdamConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("adam.lr: must be a non-negative number");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw std::invalid_argument("adam.beta1: must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw std::invalid_argument("adam.beta2: must lie in [0, 1)");
  if (!(eps > 0.0)) throw std::invalid_argument("adam.eps: must be positive");
  if (std::isnan(max_grad_norm)) throw std::invalid_argument("adam.max_grad_norm: NaN");
}

Adam::Adam(ad::ParamTree& tree, AdamConfig cfg) : tree_(tree), cfg_(cfg) {
  cfg_.validate();
  for (const auto* p : tree_.all()) {
    m_.emplace_back(p->value.numel(), 0.0);
    v_.emplace_back(p->value.numel(), 0.0);
  }
}

double Adam::step() {
  auto params = tree_.all();
  if (params.size() != m_.size()) throw std::logic_error("Adam: parameter tree changed since construction");
  double sq = 0.0;
  for (const auto* p : params) {
    if (tree_.frozen(*p)) {
      for (double g : p->grad.data()) {
        if (g != 0.0) throw std::logic_error("Adam: frozen parameter '" + p->name + "' has a nonzero gradient");
      }
      continue;
    }
    for (double g : p->grad.data()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  double scale = 1.0;
  if (cfg_.max_grad_norm > 0.0 && norm > cfg_.max_grad_norm) scale = cfg_.max_grad_norm / norm;

  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto* p = params[i];
    if (tree_.frozen(*p)) continue;
    auto value = p->value.data();
    auto grad = p->grad.data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double g = grad[j] * scale;
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
      value[j] -= cfg_.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps);
    }
  }
  return norm;
}

}  // namespace detach::train
