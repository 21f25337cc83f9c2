#pragma once

#include <functional>
#include <limits>
#include <random>

#include "detach/train/adam.hpp"
#include "detach/train/losses.hpp"
#include "detach/train/rollout.hpp"

namespace detach::train {

struct PpoConfig {
  double clip = 0.2;  // infinity disables clipping
  double value_coef = 0.5;
  double entropy_coef = 0.0;
  std::size_t epochs = 4;
  std::size_t minibatch = 512;
  bool normalize_advantages = true;

  void validate() const;
};

// Per-sample log N(a; mean, exp(log_std)) summed over the action axis: (B).
Var gaussian_log_prob(Var mean, Var log_std, Var actions);

// -mean(min(r A, clamp(r, 1 - clip, 1 + clip) A)).
Var clipped_surrogate_loss(Var ratio, Var advantages, double clip);

struct PpoTerms {
  Var total;
  Var policy;   // -mean(min(r A, clip(r) A))
  Var value;    // mean (V - R)^2
  Var entropy;  // per-sample entropy of the diagonal Gaussian
  Var ratio;    // (B)
};

// Clipped surrogate loss on one minibatch.
PpoTerms ppo_loss(const Forward& f, Var actions, const Tensor& old_log_prob, const Tensor& advantages,
                  const Tensor& returns, const PpoConfig& cfg);

// Zero mean and unit variance; a degenerate batch (std < 1e-8) is only centered.
std::vector<double> normalize_advantages(const std::vector<double>& adv);

struct PpoStats {
  double loss = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double kl = 0.0;             // mean((r - 1) - log r)
  double clip_fraction = 0.0;  // share of samples with |r - 1| > clip
  double grad_norm = 0.0;
  double r_decouple = 0.0, r_temporal = 0.0, r_semantic = 0.0;
  std::size_t updates = 0;
  std::size_t skipped = 0;  // minibatches dropped for a non-finite loss
};

// Stage-specific wrapper around the task loss. Receives the minibatch forward
// pass and may record regularizer values in stats.
using LossComposer =
    std::function<Var(const Ctx& c, const Forward& f, const model::Batch& batch, Var task, PpoStats& stats)>;

// Several epochs of shuffled minibatch updates. Statistics are averaged over
// the applied updates.
PpoStats ppo_update(const RolloutBatch& batch, ad::ParamTree& params, Adam& opt, const model::ModelConfig& mcfg,
                    model::Variant v, const obs::SeparationSchema& schema, const PpoConfig& cfg, std::mt19937_64& rng,
                    const LossComposer& compose = {});

}  // namespace detach::train
