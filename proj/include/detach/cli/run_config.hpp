#pragma once

#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "detach/metrics/metrics.hpp"
#include "detach/train/protocol.hpp"

namespace detach::cli {

// Invalid run configuration; field() is the dotted key path.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string& msg)
      : std::invalid_argument(field + ": " + msg), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

// Environment and simulation parameters.
struct SimulationConfig {
  int parallel_envs = 64;    // paper scale 4096
  int episode_length = 300;  // steps, for scenes without their own; paper scale 1200
  double control_hz = 30.0;
  int substeps = 2;
  double env_spacing = 5.0;
  std::string physics_engine = "PhysX";
  std::string solver = "TGS";
  int solver_type = 1;
  int position_iterations = 4;
  double contact_offset = 0.02;
  double static_friction = 1.0;
  double dynamic_friction = 1.0;
  bool operator==(const SimulationConfig&) const = default;
};

struct NetworkConfig {
  int transformer_layers = 4;
  int attention_heads = 8;
  int base_feature_dim = 64;
  std::vector<int> task_obs_dims{128, 96, 112, 144};
  std::vector<int> adapter_units{1024, 512};
  int window = 10;
  std::vector<int> env_kernels{3, 5, 7};
  int env_branch_channels = 16;
  int env_heads = 4;
  int self_hidden = 64;
  int fusion_heads = 8;
  int experts = 4;
  bool multi_token_env = false;
  int ffn_mult = 4;
  double log_std_init = -0.5;
  bool operator==(const NetworkConfig&) const = default;
};

struct StageEntry {
  std::string stage;
  int iterations = 0;
  double lr = 3e-4;
  bool operator==(const StageEntry&) const = default;
};

struct TrainingConfig {
  int amp_observation_steps = 10;
  std::vector<double> skill_probabilities{0.1, 0.1, 0.2, 0.1, 0.1, 0.05, 0.0, 0.05, 0.1, 0.1, 0.1};
  double mixed_init_prob = 0.5;
  std::string state_init = "default";
  int max_transition_train = 60;
  int max_transition_test = 20;
  double success_threshold = 0.3;
  std::string iet = "last_subtask";
  bool task_discrimination = true;

  int horizon = 32;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double reward_scale = 0.1;
  double clip = 0.2;
  double value_coef = 0.5;
  double entropy_coef = 0.0;
  int epochs = 4;
  int minibatch = 512;
  double max_grad_norm = 0.5;
  int pretrain_envs = 16;
  int pretrain_steps = 256;
  int pretrain_batch = 64;
  double lambda_quality = 0.0;
  double lambda_decouple = 1e-2;
  double lambda_temporal = 1e-3;
  double lambda_semantic = 1e-2;
  double alpha = 1.0;
  double beta = 1.0;
  std::vector<StageEntry> stages{
      {"PRETRAIN_ENV", 50, 3e-4}, {"PRETRAIN_SELF", 50, 3e-4}, {"FUSION", 20, 3e-4}, {"JOINT", 150, 3e-4}};
  bool operator==(const TrainingConfig&) const = default;
};

struct RewardConfig {
  double power_coeff = 0.0005;
  double traj_fail_distance = 4.0;
  double fall_height = 0.15;
  double object_speed_coeff = 1.0;
  double object_speed_threshold = 1.5;
  double decoupling_mask = 0.3;  // cross-token drop probability
  bool operator==(const RewardConfig&) const = default;
};

struct DataConfig {
  bool heightmap = true;
  double heightmap_area = 2.0;
  int heightmap_grid = 25;
  double grid_spacing = 0.1;
  double fov = 1.0;
  double camera_height = 10.0;
  int traj_points = 10;
  double traj_interval = 0.5;
  double traj_speed_min = 1.4;
  double traj_speed_max = 1.5;
  double traj_max_accel = 2.0;
  double sharp_turn_prob = 0.02;
  double sharp_turn_angle = 1.57;
  bool operator==(const DataConfig&) const = default;
};

struct EvalSection {
  int trials = 100;
  int lanes = 64;
  std::string reference = "lh1";
  bool operator==(const EvalSection&) const = default;
};

struct RunConfig {
  std::string command = "train";
  std::vector<std::string> train_tasks{"lh1"};
  std::vector<std::string> eval_tasks{"lh1", "lh2", "lh3"};
  std::vector<std::uint64_t> seeds{0};
  std::string variant = "full";
  std::string output_dir = "run";
  SimulationConfig simulation;
  NetworkConfig network;
  TrainingConfig training;
  RewardConfig reward;
  DataConfig data;
  EvalSection eval;

  bool operator==(const RunConfig&) const = default;

  // Throws ConfigError with the offending key path.
  void validate() const;
  // Switches the desk-scale overrides back to the paper values.
  void apply_paper_scale();
};

nlohmann::json to_json(const RunConfig& c);
// Strict: unknown keys and wrong types raise ConfigError. Absent keys keep
// their defaults.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

// Resolves a task name ("lh1") against the config directory, or a path.
std::filesystem::path task_path(const std::string& task, const std::filesystem::path& config_dir);
std::shared_ptr<const sim::SceneSpec> load_task(const RunConfig& c, const std::string& task,
                                                const std::filesystem::path& config_dir);

sim::SimParams sim_params(const RunConfig& c);
// Model dimensions for a scene list (observation widths come from the scenes).
model::ModelConfig model_config(const RunConfig& c, const sim::SceneSpec& scene);
train::ProtocolConfig protocol_config(const RunConfig& c, const sim::SceneSpec& scene);
metrics::EvalConfig eval_config(const RunConfig& c, std::uint64_t seed);

// Relative paths are placed under $DETACH_OUTPUT_ROOT when it is set.
std::filesystem::path output_path(const std::string& dir);

}  // namespace detach::cli
