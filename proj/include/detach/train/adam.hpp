#pragma once

#include <cstddef>
#include <vector>

#include "detach/ad/param_tree.hpp"

namespace detach::train {

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double max_grad_norm = 0.5;  // global clip over trainable params; <= 0 disables

  void validate() const;
};

// Moment state is indexed by the tree's parameter order, so the tree must not
// gain or lose parameters between steps.
class Adam {
 public:
  Adam(ad::ParamTree& tree, AdamConfig cfg);

  // Applies accumulated gradients to unfrozen parameters and returns the
  // pre-clip gradient norm. A frozen parameter carrying a nonzero gradient is
  // a contract violation and throws std::logic_error.
  double step();

  std::size_t steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

 private:
  ad::ParamTree& tree_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace detach::train
