#include "detach/train/rollout.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace detach::train {

void RolloutConfig::validate() const {
  if (n_envs == 0) throw std::invalid_argument("rollout.n_envs: must be positive");
  if (horizon == 0) throw std::invalid_argument("rollout.horizon: must be positive");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("rollout.gamma: must lie in [0, 1]");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("rollout.lambda: must lie in [0, 1]");
  if (!(reward_scale > 0.0) || !std::isfinite(reward_scale)) throw std::invalid_argument("rollout.reward_scale: must be positive");
  if (!(cross_drop >= 0.0 && cross_drop < 1.0)) throw std::invalid_argument("rollout.cross_drop: must lie in [0, 1)");
}

void RolloutBatch::validate() const {
  const std::size_t n = size();
  if (obs.size() != n * window * obs_dim || actions.size() != n * action_dim || log_probs.size() != n ||
      rewards.size() != n || values.size() != n || dones.size() != n || cross_keep.size() != n ||
      advantages.size() != n || returns.size() != n) {
    throw std::logic_error("RolloutBatch: inconsistent field sizes");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(advantages[i]) || !std::isfinite(returns[i])) {
      throw std::logic_error("RolloutBatch: non-finite advantage at sample " + std::to_string(i));
    }
  }
}

void compute_gae(const std::vector<double>& rewards, const std::vector<double>& values,
                 const std::vector<std::uint8_t>& dones, const std::vector<double>& last_values, std::size_t n_envs,
                 std::size_t horizon, double gamma, double lambda, std::vector<double>& advantages,
                 std::vector<double>& returns) {
  const std::size_t n = n_envs * horizon;
  if (rewards.size() != n || values.size() != n || dones.size() != n || last_values.size() != n_envs) {
    throw std::invalid_argument("compute_gae: size mismatch");
  }
  advantages.assign(n, 0.0);
  returns.assign(n, 0.0);
  for (std::size_t e = 0; e < n_envs; ++e) {
    double gae = 0.0;
    for (std::size_t t = horizon; t-- > 0;) {
      const std::size_t i = e * horizon + t;
      const double next_value = t + 1 == horizon ? last_values[e] : values[i + 1];
      const double live = dones[i] ? 0.0 : 1.0;
      const double delta = rewards[i] + gamma * next_value * live - values[i];
      gae = delta + gamma * lambda * live * gae;
      advantages[i] = gae;
      returns[i] = gae + values[i];
    }
  }
}

std::uint64_t episode_seed(std::uint64_t base, std::size_t env, std::uint64_t episode) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(base) ^ static_cast<std::uint64_t>(env)) ^ episode);
}

VecEnv::VecEnv(std::vector<std::shared_ptr<const sim::SceneSpec>> scenes, std::size_t n_envs, std::size_t window,
               sim::SimParams params, sim::Mode mode, std::uint64_t seed)
    : window_(window), mode_(mode), seed_(seed) {
  if (scenes.empty()) throw std::invalid_argument("VecEnv: no scenes");
  if (n_envs == 0 || window == 0) throw std::invalid_argument("VecEnv: n_envs and window must be positive");
  envs_.reserve(n_envs);
  for (std::size_t i = 0; i < n_envs; ++i) envs_.emplace_back(scenes[i % scenes.size()], params);
  obs_dim_ = envs_[0].obs_dim();
  for (const auto& e : envs_) {
    if (e.obs_dim() != obs_dim_) throw std::invalid_argument("VecEnv: scenes disagree on observation width");
  }
  episodes_.assign(n_envs, 0);
  windows_.assign(n_envs * window_ * obs_dim_, 0.0);
  scratch_.resize(obs_dim_);
  for (std::size_t i = 0; i < n_envs; ++i) reset_env(i);
}

void VecEnv::reset_env(std::size_t i) {
  envs_[i].reset(episode_seed(seed_, i, episodes_[i]++), mode_);
  push_obs(i, true);
}

void VecEnv::push_obs(std::size_t i, bool fill) {
  envs_[i].observe(scratch_);
  double* w = windows_.data() + i * window_ * obs_dim_;
  if (fill) {
    for (std::size_t t = 0; t < window_; ++t) std::copy(scratch_.begin(), scratch_.end(), w + t * obs_dim_);
    return;
  }
  std::copy(w + obs_dim_, w + window_ * obs_dim_, w);
  std::copy(scratch_.begin(), scratch_.end(), w + (window_ - 1) * obs_dim_);
}

void VecEnv::step(const std::vector<std::vector<double>>& actions, std::vector<double>& rewards,
                  std::vector<std::uint8_t>& dones, std::vector<sim::EpisodeResult>& finished) {
  if (actions.size() != envs_.size()) throw std::invalid_argument("VecEnv::step: one action per environment");
  rewards.assign(envs_.size(), 0.0);
  dones.assign(envs_.size(), 0);
  for (std::size_t i = 0; i < envs_.size(); ++i) {
    const auto r = envs_[i].step(actions[i]);
    rewards[i] = r.reward;
    if (r.done) {
      dones[i] = 1;
      finished.push_back(envs_[i].result());
      reset_env(i);
    } else {
      push_obs(i, false);
    }
  }
}

obs::SeparationSchema sim_schema(std::size_t obs_dim) {
  if (obs_dim <= static_cast<std::size_t>(sim::kSelfDim)) throw std::invalid_argument("sim_schema: observation too narrow");
  std::vector<obs::Stream> labels(obs_dim, obs::Stream::kEnv);
  std::fill(labels.begin(), labels.begin() + sim::kSelfDim, obs::Stream::kSelf);
  return obs::SeparationSchema::from_labels(std::move(labels));
}

RolloutBatch collect_rollout(VecEnv& venv, ad::ParamTree& params, const model::ModelConfig& mcfg, model::Variant v,
                             const obs::SeparationSchema& schema, const RolloutConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  const std::size_t N = venv.size(), H = cfg.horizon, W = venv.window(), D = venv.obs_dim();
  if (N != cfg.n_envs) throw std::invalid_argument("collect_rollout: VecEnv size differs from rollout.n_envs");
  if (W != mcfg.window) throw std::invalid_argument("collect_rollout: window differs from model window");
  const std::size_t A = mcfg.action_dim;
  RolloutBatch b;
  b.n_envs = N;
  b.horizon = H;
  b.window = W;
  b.obs_dim = D;
  b.action_dim = A;
  const std::size_t n = N * H;
  b.obs.resize(n * W * D);
  b.actions.resize(n * A);
  b.log_probs.resize(n);
  b.rewards.resize(n);
  b.values.resize(n);
  b.dones.resize(n);
  b.cross_keep.resize(n);

  std::bernoulli_distribution drop(cfg.cross_drop);
  std::vector<std::vector<double>> actions(N);
  std::vector<double> rewards;
  std::vector<std::uint8_t> dones;
  for (std::size_t t = 0; t < H; ++t) {
    const auto& win = venv.windows();
    model::Batch batch = model::batch_from_raw(win, N, W, schema);
    batch.cross_keep.resize(N);
    for (std::size_t e = 0; e < N; ++e) batch.cross_keep[e] = drop(rng) ? 0.0 : 1.0;
    const auto out = model::evaluate(params, mcfg, v, batch);
    for (std::size_t e = 0; e < N; ++e) {
      const std::size_t i = e * H + t;
      std::copy(win.begin() + e * W * D, win.begin() + (e + 1) * W * D, b.obs.begin() + i * W * D);
      actions[e] = model::sample_action(out.dist[e], model::ActMode::kSample, rng);
      std::copy(actions[e].begin(), actions[e].end(), b.actions.begin() + i * A);
      b.log_probs[i] = model::gaussian_log_prob(out.dist[e], actions[e]);
      b.values[i] = out.value[e];
      b.cross_keep[i] = batch.cross_keep[e];
    }
    venv.step(actions, rewards, dones, b.finished);
    for (std::size_t e = 0; e < N; ++e) {
      b.rewards[e * H + t] = rewards[e];
      b.dones[e * H + t] = dones[e];
    }
  }
  // Bootstrap values with the full cross token, matching evaluation-time inputs.
  const auto last = model::evaluate(params, mcfg, v, model::batch_from_raw(venv.windows(), N, W, schema));
  std::vector<double> scaled(n);
  for (std::size_t i = 0; i < n; ++i) scaled[i] = b.rewards[i] * cfg.reward_scale;
  compute_gae(scaled, b.values, b.dones, last.value, N, H, cfg.gamma, cfg.lambda, b.advantages, b.returns);
  b.validate();
  return b;
}

}  // namespace detach::train
