#pragma once

#include <functional>
#include <string>

#include "detach/model/policy.hpp"

namespace detach::train {

using model::Ctx;
using model::Forward;
using model::ModelConfig;
using model::Variant;
using ad::Tensor;
using ad::Var;

struct LossWeights {
  double quality = 0.0;
  double decouple = 1e-2;
  double temporal = 1e-3;
  double semantic = 1e-2;
  double alpha = 1.0;
  double beta = 1.0;

  // Throws std::invalid_argument on a negative or non-finite weight.
  void validate() const;
};

// ||recon - target||^2 summed over the last axis, averaged over the rest.
Var reconstruction_loss(Var recon, Var target);

// sum_t ||pred(z^t) - z^{t+1}||^2 over a (B, T, d) series, batch-averaged.
// T < 2 is rejected.
Var temporal_prediction_loss(Var z, const std::function<Var(Var)>& pred);

// Scene reconstruction through the env encoder and aux.dec_env.
Var loss_env_pretrain(const Ctx& c, const ModelConfig& cfg, Variant v, Var obs_env);

// Next-step latent prediction through the self encoder and aux.f_pred.
Var loss_self_pretrain(const Ctx& c, const ModelConfig& cfg, Variant v, Var obs_self);

// Supplies z_target for the fusion quality term from the cross-attention output.
using TargetProvider = std::function<Tensor(const Tensor& attention_out)>;

// task + lambda_quality * mean_b ||f_cross - z_target||^2. Requires the env
// and self groups of the tree to be frozen.
Var loss_fusion_stage(const Ctx& c, Var task_loss, const Forward& f, const LossWeights& w,
                      const TargetProvider& target);

struct Regularizers {
  Var decouple;
  Var temporal;
  Var semantic;
  std::size_t zero_variance_columns = 0;
};

// Cross-correlation energy of standardized features, ||Corr(a, b)||_F^2.
// a: (N, d1), b: (N, d2), N >= 8. Zero-variance columns standardize to zero.
Var decouple_penalty(Var a, Var b, std::size_t* zero_variance_columns = nullptr);

// sum_t ||z^{t+1} - z^t||^2, batch-averaged. z: (B, T, d).
Var temporal_penalty(Var z);

Regularizers specialization_regularizers(const Ctx& c, const Forward& f, const model::Batch& batch,
                                         const LossWeights& w);

// task + sum_i lambda_i R_i.
Var loss_joint(Var task_loss, const Regularizers& r, const LossWeights& w);

}  // namespace detach::train
