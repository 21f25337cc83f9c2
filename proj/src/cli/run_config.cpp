#include "detach/cli/run_config.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

namespace detach::cli {

using nlohmann::json;

namespace {

// One list of (key, member) pairs per section drives both directions.
template <class V>
void fields(SimulationConfig& s, V&& v) {
  v("parallel_envs", s.parallel_envs);
  v("episode_length", s.episode_length);
  v("control_hz", s.control_hz);
  v("substeps", s.substeps);
  v("env_spacing", s.env_spacing);
  v("physics_engine", s.physics_engine);
  v("solver", s.solver);
  v("solver_type", s.solver_type);
  v("position_iterations", s.position_iterations);
  v("contact_offset", s.contact_offset);
  v("static_friction", s.static_friction);
  v("dynamic_friction", s.dynamic_friction);
}

template <class V>
void fields(NetworkConfig& n, V&& v) {
  v("transformer_layers", n.transformer_layers);
  v("attention_heads", n.attention_heads);
  v("base_feature_dim", n.base_feature_dim);
  v("task_obs_dims", n.task_obs_dims);
  v("adapter_units", n.adapter_units);
  v("window", n.window);
  v("env_kernels", n.env_kernels);
  v("env_branch_channels", n.env_branch_channels);
  v("env_heads", n.env_heads);
  v("self_hidden", n.self_hidden);
  v("fusion_heads", n.fusion_heads);
  v("experts", n.experts);
  v("multi_token_env", n.multi_token_env);
  v("ffn_mult", n.ffn_mult);
  v("log_std_init", n.log_std_init);
}

template <class V>
void fields(StageEntry& s, V&& v) {
  v("stage", s.stage);
  v("iterations", s.iterations);
  v("lr", s.lr);
}

template <class V>
void fields(TrainingConfig& t, V&& v) {
  v("amp_observation_steps", t.amp_observation_steps);
  v("skill_probabilities", t.skill_probabilities);
  v("mixed_init_prob", t.mixed_init_prob);
  v("state_init", t.state_init);
  v("max_transition_train", t.max_transition_train);
  v("max_transition_test", t.max_transition_test);
  v("success_threshold", t.success_threshold);
  v("iet", t.iet);
  v("task_discrimination", t.task_discrimination);
  v("horizon", t.horizon);
  v("gamma", t.gamma);
  v("gae_lambda", t.gae_lambda);
  v("reward_scale", t.reward_scale);
  v("clip", t.clip);
  v("value_coef", t.value_coef);
  v("entropy_coef", t.entropy_coef);
  v("epochs", t.epochs);
  v("minibatch", t.minibatch);
  v("max_grad_norm", t.max_grad_norm);
  v("pretrain_envs", t.pretrain_envs);
  v("pretrain_steps", t.pretrain_steps);
  v("pretrain_batch", t.pretrain_batch);
  v("lambda_quality", t.lambda_quality);
  v("lambda_decouple", t.lambda_decouple);
  v("lambda_temporal", t.lambda_temporal);
  v("lambda_semantic", t.lambda_semantic);
  v("alpha", t.alpha);
  v("beta", t.beta);
  v("stages", t.stages);
}

template <class V>
void fields(RewardConfig& r, V&& v) {
  v("power_coeff", r.power_coeff);
  v("traj_fail_distance", r.traj_fail_distance);
  v("fall_height", r.fall_height);
  v("object_speed_coeff", r.object_speed_coeff);
  v("object_speed_threshold", r.object_speed_threshold);
  v("decoupling_mask", r.decoupling_mask);
}

template <class V>
void fields(DataConfig& d, V&& v) {
  v("heightmap", d.heightmap);
  v("heightmap_area", d.heightmap_area);
  v("heightmap_grid", d.heightmap_grid);
  v("grid_spacing", d.grid_spacing);
  v("fov", d.fov);
  v("camera_height", d.camera_height);
  v("traj_points", d.traj_points);
  v("traj_interval", d.traj_interval);
  v("traj_speed_min", d.traj_speed_min);
  v("traj_speed_max", d.traj_speed_max);
  v("traj_max_accel", d.traj_max_accel);
  v("sharp_turn_prob", d.sharp_turn_prob);
  v("sharp_turn_angle", d.sharp_turn_angle);
}

template <class V>
void fields(EvalSection& e, V&& v) {
  v("trials", e.trials);
  v("lanes", e.lanes);
  v("reference", e.reference);
}

template <class V>
void fields(RunConfig& c, V&& v) {
  v("command", c.command);
  v("train_tasks", c.train_tasks);
  v("eval_tasks", c.eval_tasks);
  v("seeds", c.seeds);
  v("variant", c.variant);
  v("output_dir", c.output_dir);
  v("simulation", c.simulation);
  v("network", c.network);
  v("training", c.training);
  v("reward", c.reward);
  v("data", c.data);
  v("eval", c.eval);
}

template <class T>
concept Section = requires(T& t) { fields(t, [](const char*, auto&) {}); };

template <class T>
json write(const T& value) {
  if constexpr (Section<T>) {
    json j = json::object();
    fields(const_cast<T&>(value), [&](const char* key, const auto& m) { j[key] = write(m); });
    return j;
  } else if constexpr (requires { value.begin(); } && !std::is_same_v<T, std::string>) {
    json j = json::array();
    for (const auto& x : value) j.push_back(write(x));
    return j;
  } else {
    return json(value);
  }
}

template <class T>
void read(const json& j, T& out, const std::string& path) {
  if constexpr (Section<T>) {
    if (!j.is_object()) throw ConfigError(path, "expected an object");
    std::set<std::string> known;
    fields(out, [&](const char* key, auto& m) {
      known.insert(key);
      if (j.contains(key)) read(j.at(key), m, path.empty() ? key : path + "." + key);
    });
    for (const auto& [k, _] : j.items()) {
      if (!known.contains(k)) throw ConfigError(path.empty() ? k : path + "." + k, "unknown key");
    }
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!j.is_string()) throw ConfigError(path, "expected a string");
    out = j.get<std::string>();
  } else if constexpr (std::is_same_v<T, bool>) {
    if (!j.is_boolean()) throw ConfigError(path, "expected true or false");
    out = j.get<bool>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!j.is_number_integer()) throw ConfigError(path, "expected an integer");
    if constexpr (std::is_unsigned_v<T>) {
      if (j.is_number_unsigned()) {
        out = j.get<T>();
      } else {
        throw ConfigError(path, "expected a non-negative integer");
      }
    } else {
      out = j.get<T>();
    }
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!j.is_number()) throw ConfigError(path, "expected a number");
    out = j.get<T>();
  } else {
    if (!j.is_array()) throw ConfigError(path, "expected an array");
    out.clear();
    for (std::size_t i = 0; i < j.size(); ++i) {
      typename T::value_type x{};
      read(j[i], x, path + "[" + std::to_string(i) + "]");
      out.push_back(std::move(x));
    }
  }
}

void positive(double v, const std::string& field) {
  if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(field, "must be positive");
}
void non_negative(double v, const std::string& field) {
  if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(field, "must be non-negative");
}
void unit(double v, const std::string& field) {
  if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(field, "must lie in [0, 1]");
}

}  // namespace

void RunConfig::validate() const {
  static const std::set<std::string> commands{"train", "eval", "ablate", "gradcheck", "gen-scene",
                                              "gen-traj", "heightmap", "replay", "report"};
  if (!commands.contains(command)) throw ConfigError("command", "unknown command '" + command + "'");
  if (train_tasks.empty()) throw ConfigError("train_tasks", "at least one task required");
  if (eval_tasks.empty()) throw ConfigError("eval_tasks", "at least one task required");
  if (seeds.empty()) throw ConfigError("seeds", "at least one seed required");
  try {
    model::variant_from_name(variant);
  } catch (const std::exception&) {
    throw ConfigError("variant", "expected full, a1 or a2");
  }
  if (output_dir.empty()) throw ConfigError("output_dir", "must not be empty");

  const auto& s = simulation;
  positive(s.parallel_envs, "simulation.parallel_envs");
  positive(s.episode_length, "simulation.episode_length");
  positive(s.control_hz, "simulation.control_hz");
  positive(s.substeps, "simulation.substeps");
  non_negative(s.env_spacing, "simulation.env_spacing");
  positive(s.position_iterations, "simulation.position_iterations");
  non_negative(s.contact_offset, "simulation.contact_offset");
  non_negative(s.static_friction, "simulation.static_friction");
  non_negative(s.dynamic_friction, "simulation.dynamic_friction");

  const auto& n = network;
  positive(n.transformer_layers, "network.transformer_layers");
  positive(n.attention_heads, "network.attention_heads");
  positive(n.base_feature_dim, "network.base_feature_dim");
  if (n.base_feature_dim % n.attention_heads != 0)
    throw ConfigError("network.attention_heads", "must divide network.base_feature_dim");
  if (n.base_feature_dim % n.fusion_heads != 0)
    throw ConfigError("network.fusion_heads", "must divide network.base_feature_dim");
  for (std::size_t i = 0; i < n.task_obs_dims.size(); ++i)
    positive(n.task_obs_dims[i], "network.task_obs_dims[" + std::to_string(i) + "]");
  for (std::size_t i = 0; i < n.adapter_units.size(); ++i)
    positive(n.adapter_units[i], "network.adapter_units[" + std::to_string(i) + "]");
  if (n.window < 2) throw ConfigError("network.window", "must be at least 2");
  if (n.env_kernels.empty()) throw ConfigError("network.env_kernels", "at least one kernel required");
  for (std::size_t i = 0; i < n.env_kernels.size(); ++i) {
    if (n.env_kernels[i] < 1 || n.env_kernels[i] % 2 == 0)
      throw ConfigError("network.env_kernels[" + std::to_string(i) + "]", "must be a positive odd size");
  }
  positive(n.env_branch_channels, "network.env_branch_channels");
  positive(n.env_heads, "network.env_heads");
  if ((n.env_kernels.size() * n.env_branch_channels) % n.env_heads != 0)
    throw ConfigError("network.env_heads", "must divide the env feature width");
  positive(n.self_hidden, "network.self_hidden");
  positive(n.fusion_heads, "network.fusion_heads");
  positive(n.experts, "network.experts");
  positive(n.ffn_mult, "network.ffn_mult");

  const auto& t = training;
  positive(t.amp_observation_steps, "training.amp_observation_steps");
  double total = 0.0;
  for (std::size_t i = 0; i < t.skill_probabilities.size(); ++i) {
    unit(t.skill_probabilities[i], "training.skill_probabilities[" + std::to_string(i) + "]");
    total += t.skill_probabilities[i];
  }
  if (!t.skill_probabilities.empty() && std::abs(total - 1.0) > 1e-6)
    throw ConfigError("training.skill_probabilities", "must sum to 1");
  unit(t.mixed_init_prob, "training.mixed_init_prob");
  positive(t.max_transition_train, "training.max_transition_train");
  positive(t.max_transition_test, "training.max_transition_test");
  positive(t.success_threshold, "training.success_threshold");
  positive(t.horizon, "training.horizon");
  unit(t.gamma, "training.gamma");
  unit(t.gae_lambda, "training.gae_lambda");
  positive(t.reward_scale, "training.reward_scale");
  positive(t.clip, "training.clip");
  non_negative(t.value_coef, "training.value_coef");
  non_negative(t.entropy_coef, "training.entropy_coef");
  positive(t.epochs, "training.epochs");
  positive(t.minibatch, "training.minibatch");
  positive(t.max_grad_norm, "training.max_grad_norm");
  positive(t.pretrain_envs, "training.pretrain_envs");
  if (t.pretrain_steps < n.window) throw ConfigError("training.pretrain_steps", "must cover one window");
  positive(t.pretrain_batch, "training.pretrain_batch");
  for (auto [v, name] : {std::pair{t.lambda_quality, "lambda_quality"}, {t.lambda_decouple, "lambda_decouple"},
                         {t.lambda_temporal, "lambda_temporal"}, {t.lambda_semantic, "lambda_semantic"},
                         {t.alpha, "alpha"}, {t.beta, "beta"}}) {
    non_negative(v, std::string("training.") + name);
  }
  int last = -1;
  for (std::size_t i = 0; i < t.stages.size(); ++i) {
    const std::string f = "training.stages[" + std::to_string(i) + "]";
    int order = 0;
    try {
      order = static_cast<int>(train::stage_from_name(t.stages[i].stage));
    } catch (const std::exception&) {
      throw ConfigError(f + ".stage", "expected PRETRAIN_ENV, PRETRAIN_SELF, FUSION or JOINT");
    }
    if (order <= last) throw ConfigError(f + ".stage", "stages must follow protocol order without repeats");
    last = order;
    non_negative(t.stages[i].iterations, f + ".iterations");
    positive(t.stages[i].lr, f + ".lr");
  }

  const auto& r = reward;
  non_negative(r.power_coeff, "reward.power_coeff");
  positive(r.traj_fail_distance, "reward.traj_fail_distance");
  non_negative(r.fall_height, "reward.fall_height");
  non_negative(r.object_speed_coeff, "reward.object_speed_coeff");
  non_negative(r.object_speed_threshold, "reward.object_speed_threshold");
  unit(r.decoupling_mask, "reward.decoupling_mask");

  const auto& d = data;
  positive(d.heightmap_area, "data.heightmap_area");
  if (d.heightmap_grid != sim::kGridSide)
    throw ConfigError("data.heightmap_grid", "only " + std::to_string(sim::kGridSide) + " is supported");
  positive(d.grid_spacing, "data.grid_spacing");
  positive(d.fov, "data.fov");
  positive(d.camera_height, "data.camera_height");
  sim::TrajectoryParams tp = sim_params(*this).traj;
  try {
    tp.validate();
  } catch (const std::exception& e) {
    throw ConfigError("data", e.what());
  }

  positive(eval.trials, "eval.trials");
  positive(eval.lanes, "eval.lanes");
  if (eval.reference.empty()) throw ConfigError("eval.reference", "must name a task");
}

void RunConfig::apply_paper_scale() {
  simulation.parallel_envs = 4096;
  simulation.episode_length = 1200;
}

json to_json(const RunConfig& c) { return write(c); }

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  read(j, c, "");
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config", "cannot open " + path.string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::parse_error& e) {
    throw ConfigError("config", std::string("invalid JSON: ") + e.what());
  }
  return run_config_from_json(j);
}

std::filesystem::path task_path(const std::string& task, const std::filesystem::path& config_dir) {
  std::filesystem::path p(task);
  if (p.has_extension() || p.has_parent_path()) return p;
  return config_dir / (task + ".json");
}

std::shared_ptr<const sim::SceneSpec> load_task(const RunConfig& c, const std::string& task,
                                                const std::filesystem::path& config_dir) {
  const auto path = task_path(task, config_dir);
  std::ifstream f(path);
  if (!f) throw ConfigError("task." + task, "cannot open " + path.string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::parse_error& e) {
    throw ConfigError("task." + task, std::string("invalid JSON: ") + e.what());
  }
  if (!j.contains("episode_steps")) j["episode_steps"] = c.simulation.episode_length;
  sim::SceneSpec s;
  try {
    s = sim::build_scene(j);
  } catch (const sim::SceneError& e) {
    throw ConfigError("task." + task + "." + std::string(e.what()).substr(0, std::string(e.what()).find(':')),
                      e.what());
  }
  s.plan.max_transition_train = c.training.max_transition_train;
  s.plan.max_transition_test = c.training.max_transition_test;
  s.plan.success_threshold = c.training.success_threshold;
  s.perception_grid = c.data.heightmap;
  return std::make_shared<const sim::SceneSpec>(std::move(s));
}

sim::SimParams sim_params(const RunConfig& c) {
  sim::SimParams p;
  p.dt = 1.0 / c.simulation.control_hz;
  p.power_coeff = c.reward.power_coeff;
  p.traj_fail_distance = c.reward.traj_fail_distance;
  p.fall_height = c.reward.fall_height;
  p.object_speed_coeff = c.reward.object_speed_coeff;
  p.object_speed_threshold = c.reward.object_speed_threshold;
  p.grid_spacing = c.data.grid_spacing;
  p.traj.points = c.data.traj_points;
  p.traj.dt = c.data.traj_interval;
  p.traj.v_min = c.data.traj_speed_min;
  p.traj.v_max = c.data.traj_speed_max;
  p.traj.max_accel = c.data.traj_max_accel;
  p.traj.sharp_prob = c.data.sharp_turn_prob;
  p.traj.sharp_angle = c.data.sharp_turn_angle;
  return p;
}

model::ModelConfig model_config(const RunConfig& c, const sim::SceneSpec& scene) {
  const auto& n = c.network;
  model::ModelConfig m;
  m.d_env = sim::kEnvBaseDim + (scene.perception_grid ? sim::kGridCells : 0);
  m.d_self = sim::kSelfDim;
  m.action_dim = sim::kActionDim;
  m.window = static_cast<std::size_t>(n.window);
  m.env_kernels.assign(n.env_kernels.begin(), n.env_kernels.end());
  m.env_branch_channels = static_cast<std::size_t>(n.env_branch_channels);
  m.env_heads = static_cast<std::size_t>(n.env_heads);
  m.d_h = static_cast<std::size_t>(n.self_hidden);
  m.d_model = static_cast<std::size_t>(n.base_feature_dim);
  m.fusion_heads = static_cast<std::size_t>(n.fusion_heads);
  m.experts = static_cast<std::size_t>(n.experts);
  m.multi_token_env = n.multi_token_env;
  m.trunk_layers = static_cast<std::size_t>(n.transformer_layers);
  m.trunk_heads = static_cast<std::size_t>(n.attention_heads);
  m.ffn_mult = static_cast<std::size_t>(n.ffn_mult);
  m.log_std_init = n.log_std_init;
  try {
    m.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("network", e.what());
  }
  return m;
}

train::ProtocolConfig protocol_config(const RunConfig& c, const sim::SceneSpec& scene) {
  const auto& t = c.training;
  train::ProtocolConfig p;
  p.model = model_config(c, scene);
  p.variant = model::variant_from_name(c.variant);
  p.sim = sim_params(c);
  p.rollout.n_envs = static_cast<std::size_t>(c.simulation.parallel_envs);
  p.rollout.horizon = static_cast<std::size_t>(t.horizon);
  p.rollout.gamma = t.gamma;
  p.rollout.lambda = t.gae_lambda;
  p.rollout.reward_scale = t.reward_scale;
  p.rollout.cross_drop = c.reward.decoupling_mask;
  p.ppo.clip = t.clip;
  p.ppo.value_coef = t.value_coef;
  p.ppo.entropy_coef = t.entropy_coef;
  p.ppo.epochs = static_cast<std::size_t>(t.epochs);
  p.ppo.minibatch = static_cast<std::size_t>(t.minibatch);
  p.pretrain.envs = static_cast<std::size_t>(t.pretrain_envs);
  p.pretrain.steps = static_cast<std::size_t>(t.pretrain_steps);
  p.pretrain.batch = static_cast<std::size_t>(t.pretrain_batch);
  train::LossWeights w;
  w.quality = t.lambda_quality;
  w.decouple = t.lambda_decouple;
  w.temporal = t.lambda_temporal;
  w.semantic = t.lambda_semantic;
  w.alpha = t.alpha;
  w.beta = t.beta;
  for (const auto& s : t.stages) {
    train::StageConfig sc;
    sc.stage = train::stage_from_name(s.stage);
    sc.iterations = static_cast<std::size_t>(s.iterations);
    sc.adam.lr = s.lr;
    sc.adam.max_grad_norm = t.max_grad_norm;
    sc.weights = w;
    p.stages.push_back(sc);
  }
  return p;
}

metrics::EvalConfig eval_config(const RunConfig& c, std::uint64_t seed) {
  metrics::EvalConfig e;
  e.trials = static_cast<std::size_t>(c.eval.trials);
  e.lanes = static_cast<std::size_t>(c.eval.lanes);
  e.seed = seed;
  e.sim = sim_params(c);
  return e;
}

std::filesystem::path output_path(const std::string& dir) {
  std::filesystem::path p(dir);
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv("DETACH_OUTPUT_ROOT"); root != nullptr && *root != '\0') {
    return std::filesystem::path(root) / p;
  }
  return p;
}

}  // namespace detach::cli
