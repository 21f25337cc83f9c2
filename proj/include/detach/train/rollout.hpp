#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <vector>

#include "detach/model/policy.hpp"
#include "detach/sim/env.hpp"

namespace detach::train {

struct RolloutConfig {
  std::size_t n_envs = 64;
  std::size_t horizon = 32;
  double gamma = 0.99;
  double lambda = 0.95;
  double reward_scale = 0.1;
  double cross_drop = 0.3;  // probability of masking the cross-attention token per step
  sim::Mode mode = sim::Mode::kTrain;

  void validate() const;
};

// Samples in env-major order: index = env * horizon + t.
struct RolloutBatch {
  std::size_t n_envs = 0, horizon = 0, window = 0, obs_dim = 0, action_dim = 0;
  std::vector<double> obs;         // (N*H, window, obs_dim)
  std::vector<double> actions;     // (N*H, action_dim)
  std::vector<double> log_probs;   // N*H
  std::vector<double> rewards;     // unscaled
  std::vector<double> values;
  std::vector<std::uint8_t> dones;  // episode ended after this step
  std::vector<double> cross_keep;
  std::vector<double> advantages;
  std::vector<double> returns;
  std::vector<sim::EpisodeResult> finished;

  std::size_t size() const { return n_envs * horizon; }
  // Throws std::logic_error on inconsistent sizes or non-finite advantages.
  void validate() const;
};

// GAE over env-major rows. dones[i] marks a terminal transition (no
// bootstrap); the last step of each row bootstraps from last_values[env].
void compute_gae(const std::vector<double>& rewards, const std::vector<double>& values,
                 const std::vector<std::uint8_t>& dones, const std::vector<double>& last_values, std::size_t n_envs,
                 std::size_t horizon, double gamma, double lambda, std::vector<double>& advantages,
                 std::vector<double>& returns);

// Per-environment episode seed derived from (base, env, episode).
std::uint64_t episode_seed(std::uint64_t base, std::size_t env, std::uint64_t episode);

// N environments cycled over a scene list, each keeping a window of raw
// observations. A fresh episode fills its window with the first frame.
class VecEnv {
 public:
  VecEnv(std::vector<std::shared_ptr<const sim::SceneSpec>> scenes, std::size_t n_envs, std::size_t window,
         sim::SimParams params, sim::Mode mode, std::uint64_t seed);

  std::size_t size() const { return envs_.size(); }
  std::size_t window() const { return window_; }
  std::size_t obs_dim() const { return obs_dim_; }
  sim::Env& env(std::size_t i) { return envs_[i]; }

  // Current windows, (N, window, obs_dim) flattened.
  const std::vector<double>& windows() const { return windows_; }

  // Steps every environment; finished episodes are appended and reset.
  void step(const std::vector<std::vector<double>>& actions, std::vector<double>& rewards,
            std::vector<std::uint8_t>& dones, std::vector<sim::EpisodeResult>& finished);

 private:
  void reset_env(std::size_t i);
  void push_obs(std::size_t i, bool fill);

  std::vector<sim::Env> envs_;
  std::vector<std::uint64_t> episodes_;
  std::size_t window_, obs_dim_;
  sim::Mode mode_;
  std::uint64_t seed_;
  std::vector<double> windows_;
  std::vector<double> scratch_;
};

// Runs the policy for cfg.horizon steps in every environment and fills the
// advantage estimates.
RolloutBatch collect_rollout(VecEnv& venv, ad::ParamTree& params, const model::ModelConfig& mcfg, model::Variant v,
                             const obs::SeparationSchema& schema, const RolloutConfig& cfg, std::mt19937_64& rng);

// Observation schema of the simulator: self-state indices first, then env.
obs::SeparationSchema sim_schema(std::size_t obs_dim);

}  // namespace detach::train
