#include "detach/train/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace detach::train {

namespace ops = ad;

void PpoConfig::validate() const {
  if (!(clip > 0.0)) throw std::invalid_argument("ppo.clip: must be positive");
  if (!(value_coef >= 0.0) || !std::isfinite(value_coef)) throw std::invalid_argument("ppo.value_coef: must be non-negative");
  if (!(entropy_coef >= 0.0) || !std::isfinite(entropy_coef)) throw std::invalid_argument("ppo.entropy_coef: must be non-negative");
  if (epochs == 0) throw std::invalid_argument("ppo.epochs: must be positive");
  if (minibatch < 8) throw std::invalid_argument("ppo.minibatch: must be at least 8");
}

Var gaussian_log_prob(Var mean, Var log_std, Var actions) {
  if (mean.shape() != actions.shape() || mean.rank() != 2 || log_std.rank() != 1 || log_std.dim(0) != mean.dim(1)) {
    throw ad::shape_error("gaussian_log_prob", mean.shape(), log_std.shape());
  }
  const double A = static_cast<double>(mean.dim(1));
  const Var inv_std = ops::exp(ops::scale(log_std, -1.0));
  const Var z = ops::mul(ops::sub(actions, mean), inv_std);
  const Var per_dim = ops::sub(ops::scale(ops::square(z), -0.5), log_std);
  return ops::add_scalar(ops::sum(per_dim, 1), -0.5 * A * std::log(2.0 * std::numbers::pi));
}

Var clipped_surrogate_loss(Var ratio, Var advantages, double clip) {
  const Var unclipped = ops::mul(ratio, advantages);
  const Var clipped = ops::mul(ops::clamp(ratio, 1.0 - clip, 1.0 + clip), advantages);
  return ops::scale(ops::mean(ops::minimum(unclipped, clipped)), -1.0);
}

PpoTerms ppo_loss(const Forward& f, Var actions, const Tensor& old_log_prob, const Tensor& advantages,
                  const Tensor& returns, const PpoConfig& cfg) {
  ad::Graph& g = *actions.graph;
  const std::size_t B = actions.dim(0);
  if (old_log_prob.shape() != ad::Shape{B} || advantages.shape() != ad::Shape{B} || returns.shape() != ad::Shape{B}) {
    throw ad::shape_error("ppo_loss", old_log_prob.shape(), ad::Shape{B});
  }
  PpoTerms t;
  const Var lp = gaussian_log_prob(f.out.mean, f.out.log_std, actions);
  t.ratio = ops::exp(ops::sub(lp, g.constant(old_log_prob)));
  t.policy = clipped_surrogate_loss(t.ratio, g.constant(advantages), cfg.clip);
  const Var v = ops::reshape(f.out.value, {B});
  t.value = ops::mean(ops::square(ops::sub(v, g.constant(returns))));
  const double A = static_cast<double>(f.out.log_std.dim(0));
  t.entropy = ops::add_scalar(ops::sum(f.out.log_std), 0.5 * A * std::log(2.0 * std::numbers::pi * std::numbers::e));
  t.total = ops::add(t.policy, ops::scale(t.value, cfg.value_coef));
  if (cfg.entropy_coef != 0.0) t.total = ops::sub(t.total, ops::scale(t.entropy, cfg.entropy_coef));
  return t;
}

std::vector<double> normalize_advantages(const std::vector<double>& adv) {
  if (adv.empty()) return {};
  const double n = static_cast<double>(adv.size());
  const double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / n;
  double var = 0.0;
  for (double a : adv) var += (a - mean) * (a - mean);
  const double sd = std::sqrt(var / n);
  std::vector<double> out(adv.size());
  for (std::size_t i = 0; i < adv.size(); ++i) out[i] = sd < 1e-8 ? adv[i] - mean : (adv[i] - mean) / sd;
  return out;
}

PpoStats ppo_update(const RolloutBatch& batch, ad::ParamTree& params, Adam& opt, const model::ModelConfig& mcfg,
                    model::Variant v, const obs::SeparationSchema& schema, const PpoConfig& cfg, std::mt19937_64& rng,
                    const LossComposer& compose) {
  cfg.validate();
  batch.validate();
  const std::size_t n = batch.size(), W = batch.window, D = batch.obs_dim, A = batch.action_dim;
  const std::vector<double> adv = cfg.normalize_advantages ? normalize_advantages(batch.advantages) : batch.advantages;
  const std::size_t mb = std::min(cfg.minibatch, n);

  std::vector<std::size_t> order(n);
  PpoStats stats;
  PpoStats sums;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    // Trailing samples that do not fill a minibatch wait for the next epoch.
    for (std::size_t start = 0; start + mb <= n; start += mb) {
      std::vector<double> raw(mb * W * D);
      Tensor act({mb, A}), old_lp({mb}), a_t({mb}), ret({mb});
      std::vector<double> keep(mb);
      for (std::size_t k = 0; k < mb; ++k) {
        const std::size_t i = order[start + k];
        std::copy(batch.obs.begin() + i * W * D, batch.obs.begin() + (i + 1) * W * D, raw.begin() + k * W * D);
        for (std::size_t j = 0; j < A; ++j) act.at(k, j) = batch.actions[i * A + j];
        old_lp[k] = batch.log_probs[i];
        a_t[k] = adv[i];
        ret[k] = batch.returns[i];
        keep[k] = batch.cross_keep[i];
      }
      model::Batch mbatch = model::batch_from_raw(raw, mb, W, schema);
      mbatch.cross_keep = std::move(keep);

      ad::Graph g;
      Ctx c{g, params};
      const Forward f = model::forward(c, mcfg, v, mbatch);
      const Var actions = g.constant(std::move(act));
      const PpoTerms t = ppo_loss(f, actions, old_lp, a_t, ret, cfg);
      PpoStats local;
      const Var total = compose ? compose(c, f, mbatch, t.total, local) : t.total;
      const double loss = total.value().item();
      if (!std::isfinite(loss)) {
        ++stats.skipped;
        continue;
      }
      params.zero_grad();
      g.backward(total);
      const double gn = opt.step();

      double kl = 0.0, clipped = 0.0;
      for (double r : t.ratio.value().data()) {
        kl += (r - 1.0) - std::log(r);
        clipped += std::abs(r - 1.0) > cfg.clip ? 1.0 : 0.0;
      }
      sums.loss += loss;
      sums.policy_loss += t.policy.value().item();
      sums.value_loss += t.value.value().item();
      sums.entropy += t.entropy.value().item();
      sums.kl += kl / static_cast<double>(mb);
      sums.clip_fraction += clipped / static_cast<double>(mb);
      sums.grad_norm += gn;
      sums.r_decouple += local.r_decouple;
      sums.r_temporal += local.r_temporal;
      sums.r_semantic += local.r_semantic;
      ++stats.updates;
    }
  }
  params.zero_grad();
  if (stats.updates > 0) {
    const double u = static_cast<double>(stats.updates);
    stats.loss = sums.loss / u;
    stats.policy_loss = sums.policy_loss / u;
    stats.value_loss = sums.value_loss / u;
    stats.entropy = sums.entropy / u;
    stats.kl = sums.kl / u;
    stats.clip_fraction = sums.clip_fraction / u;
    stats.grad_norm = sums.grad_norm / u;
    stats.r_decouple = sums.r_decouple / u;
    stats.r_temporal = sums.r_temporal / u;
    stats.r_semantic = sums.r_semantic / u;
  }
  return stats;
}

}  // namespace detach::train
