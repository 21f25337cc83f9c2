#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "detach/train/ppo.hpp"

namespace detach::train {

enum class Stage : std::uint8_t { kPretrainEnv, kPretrainSelf, kFusion, kJoint };

std::string_view stage_name(Stage s);
Stage stage_from_name(std::string_view name);

struct StageConfig {
  Stage stage = Stage::kJoint;
  std::size_t iterations = 0;
  AdamConfig adam;
  LossWeights weights;

  // Groups held fixed during the stage. FUSION freezes both encoders (and
  // the auxiliary heads it does not use); JOINT freezes nothing.
  std::vector<ad::ParamGroup> frozen_groups() const;
};

// Random-walk corpus for the two pretraining stages.
struct PretrainConfig {
  std::size_t envs = 16;
  std::size_t steps = 256;
  std::size_t batch = 64;
};

struct IterLog {
  std::size_t iteration = 0;  // global across stages
  Stage stage = Stage::kJoint;
  double loss = 0.0;
  PpoStats ppo;               // RL stages only
  double mean_reward = 0.0;   // per step, unscaled
  std::size_t episodes = 0;   // finished during the rollout
  double success[4] = {};     // mean outcome per skill; NaN when absent
  double lh_success = 0.0;    // NaN when no episode finished
};

void write_log_header(std::ostream& os);
void write_log_row(std::ostream& os, const IterLog& row);

struct StageCheckpoint {
  Stage stage;
  std::uint64_t hash = 0;
  std::uint64_t env_hash = 0;
  std::uint64_t self_hash = 0;
  std::filesystem::path file;  // empty when no output directory is set
};

struct ProtocolConfig {
  model::ModelConfig model;
  model::Variant variant = model::Variant::kFull;
  sim::SimParams sim;
  RolloutConfig rollout;
  PpoConfig ppo;
  PretrainConfig pretrain;
  std::vector<StageConfig> stages;
  std::filesystem::path out_dir;  // checkpoints and train_log.csv; empty writes nothing
  TargetProvider fusion_target;
  std::function<void(const std::string&)> warn;  // defaults to stderr
  std::function<void(const IterLog&)> on_iteration;

  // Stages must appear in protocol order without repeats; any may be omitted.
  void validate() const;
};

struct ProtocolResult {
  ad::ParamTree params;
  std::vector<IterLog> log;
  std::vector<StageCheckpoint> checkpoints;
  // Sum of weighted regularizers over |task loss| on the first JOINT batch.
  std::optional<double> regularizer_ratio;
};

using SceneList = std::vector<std::shared_ptr<const sim::SceneSpec>>;

// Deterministic for a fixed seed. `init` replaces the seeded initialization.
ProtocolResult run_protocol(const ProtocolConfig& cfg, const SceneList& scenes, std::uint64_t seed,
                            std::optional<ad::ParamTree> init = std::nullopt);

// Windows of raw observations from smoothed random actions, (count, window, obs_dim).
std::vector<double> random_walk_windows(const SceneList& scenes, const sim::SimParams& params, std::size_t window,
                                        std::size_t envs, std::size_t steps, std::uint64_t seed);

}  // namespace detach::train
