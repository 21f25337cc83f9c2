#include "detach/train/protocol.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <stdexcept>

namespace detach::train {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void apply_freeze(ad::ParamTree& tree, const StageConfig& s) {
  for (auto g : {ad::ParamGroup::kEnv, ad::ParamGroup::kSelf, ad::ParamGroup::kFusion, ad::ParamGroup::kTrunk,
                 ad::ParamGroup::kHeads, ad::ParamGroup::kAux}) {
    tree.set_frozen(g, false);
  }
  for (auto g : s.frozen_groups()) tree.set_frozen(g, true);
}

void fill_episode_stats(IterLog& row, const std::vector<sim::EpisodeResult>& eps) {
  row.episodes = eps.size();
  double sum[4] = {}, count[4] = {};
  double lh = 0.0;
  for (const auto& e : eps) {
    for (std::size_t k = 0; k < e.skills.size(); ++k) {
      const auto s = static_cast<std::size_t>(e.skills[k]);
      sum[s] += e.outcomes[k];
      count[s] += 1.0;
    }
    lh += e.lh_success() ? 1.0 : 0.0;
  }
  for (int s = 0; s < 4; ++s) row.success[s] = count[s] > 0 ? sum[s] / count[s] : kNaN;
  row.lh_success = eps.empty() ? kNaN : lh / static_cast<double>(eps.size());
}

void put(std::ostream& os, double v) {
  if (std::isfinite(v)) os << v;
}

}  // namespace

std::string_view stage_name(Stage s) {
  switch (s) {
    case Stage::kPretrainEnv: return "PRETRAIN_ENV";
    case Stage::kPretrainSelf: return "PRETRAIN_SELF";
    case Stage::kFusion: return "FUSION";
    case Stage::kJoint: return "JOINT";
  }
  return "JOINT";
}

Stage stage_from_name(std::string_view name) {
  for (auto s : {Stage::kPretrainEnv, Stage::kPretrainSelf, Stage::kFusion, Stage::kJoint}) {
    if (stage_name(s) == name) return s;
  }
  throw std::invalid_argument("unknown stage '" + std::string(name) + "'");
}

std::vector<ad::ParamGroup> StageConfig::frozen_groups() const {
  using G = ad::ParamGroup;
  switch (stage) {
    case Stage::kPretrainEnv: return {G::kSelf, G::kFusion, G::kTrunk, G::kHeads};
    case Stage::kPretrainSelf: return {G::kEnv, G::kFusion, G::kTrunk, G::kHeads};
    case Stage::kFusion: return {G::kEnv, G::kSelf, G::kAux};
    case Stage::kJoint: return {};
  }
  return {};
}

void ProtocolConfig::validate() const {
  model.validate();
  rollout.validate();
  ppo.validate();
  int last = -1;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const int s = static_cast<int>(stages[i].stage);
    if (s <= last) {
      throw std::invalid_argument("stages[" + std::to_string(i) + "]: " + std::string(stage_name(stages[i].stage)) +
                                  " out of order; expected PRETRAIN_ENV, PRETRAIN_SELF, FUSION, JOINT");
    }
    last = s;
    stages[i].adam.validate();
    stages[i].weights.validate();
  }
  if (pretrain.batch < 1 || pretrain.envs < 1) throw std::invalid_argument("pretrain: batch and envs must be positive");
  if (pretrain.steps < model.window) throw std::invalid_argument("pretrain.steps: must cover at least one window");
}

void write_log_header(std::ostream& os) {
  os << "iteration,stage,loss,policy_loss,value_loss,entropy,r_decouple,r_temporal,r_semantic,kl,clip_fraction,"
        "grad_norm,skipped,mean_reward,episodes,success_traj,success_carry,success_climb,success_sit,lh_success\n";
}

void write_log_row(std::ostream& os, const IterLog& r) {
  const bool rl = r.stage == Stage::kFusion || r.stage == Stage::kJoint;
  os << r.iteration << ',' << stage_name(r.stage) << ',';
  put(os, r.loss);
  for (double v : {r.ppo.policy_loss, r.ppo.value_loss, r.ppo.entropy, r.ppo.r_decouple, r.ppo.r_temporal,
                   r.ppo.r_semantic, r.ppo.kl, r.ppo.clip_fraction, r.ppo.grad_norm}) {
    os << ',';
    if (rl) put(os, v);
  }
  os << ',';
  if (rl) os << r.ppo.skipped;
  os << ',';
  if (rl) put(os, r.mean_reward);
  os << ',';
  if (rl) os << r.episodes;
  for (double v : r.success) {
    os << ',';
    if (rl) put(os, v);
  }
  os << ',';
  if (rl) put(os, r.lh_success);
  os << '\n';
}

std::vector<double> random_walk_windows(const SceneList& scenes, const sim::SimParams& params, std::size_t window,
                                        std::size_t envs, std::size_t steps, std::uint64_t seed) {
  VecEnv venv(scenes, envs, window, params, sim::Mode::kTrain, seed);
  std::mt19937_64 rng(seed ^ 0x5eedULL);
  std::normal_distribution<double> nd;
  std::vector<std::vector<double>> actions(envs, std::vector<double>(sim::kActionDim, 0.0));
  std::vector<double> rewards;
  std::vector<std::uint8_t> dones;
  std::vector<sim::EpisodeResult> finished;
  std::vector<double> out;
  const auto& win = venv.windows();
  for (std::size_t t = 0; t < steps; ++t) {
    for (auto& a : actions) {
      // Ornstein-Uhlenbeck-like drift keeps motion coherent across the window.
      for (double& x : a) x = std::clamp(0.9 * x + 0.3 * nd(rng), -1.0, 1.0);
    }
    venv.step(actions, rewards, dones, finished);
    if (t + 1 >= window) out.insert(out.end(), win.begin(), win.end());
  }
  return out;
}

ProtocolResult run_protocol(const ProtocolConfig& cfg, const SceneList& scenes, std::uint64_t seed,
                            std::optional<ad::ParamTree> init) {
  cfg.validate();
  if (scenes.empty()) throw std::invalid_argument("run_protocol: no training scenes");
  auto warn = cfg.warn ? cfg.warn : [](const std::string& m) { std::cerr << "warning: " << m << '\n'; };

  ProtocolResult res;
  res.params = init ? std::move(*init) : model::init_params(cfg.model, cfg.variant, seed);
  ad::ParamTree& params = res.params;
  std::mt19937_64 rng(episode_seed(seed, 0x7a11, 0));

  const sim::Env probe(scenes[0], cfg.sim);
  const std::size_t obs_dim = probe.obs_dim();
  const auto schema = sim_schema(obs_dim);
  if (schema.d_env() != cfg.model.d_env || schema.d_self() != cfg.model.d_self) {
    throw std::invalid_argument("model.d_env/d_self: do not match the scene observation (" +
                                std::to_string(schema.d_env()) + "/" + std::to_string(schema.d_self()) + ")");
  }

  std::ofstream csv;
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir / "checkpoints");
    csv.open(cfg.out_dir / "train_log.csv", std::ios::trunc);
    if (!csv) throw std::runtime_error("cannot write " + (cfg.out_dir / "train_log.csv").string());
    csv << std::setprecision(10);
    write_log_header(csv);
  }

  std::vector<double> corpus;
  std::unique_ptr<VecEnv> venv;
  const std::size_t W = cfg.model.window;
  std::size_t iteration = 0;

  for (std::size_t si = 0; si < cfg.stages.size(); ++si) {
    const StageConfig& stage = cfg.stages[si];
    apply_freeze(params, stage);
    Adam opt(params, stage.adam);
    const bool pretrain = stage.stage == Stage::kPretrainEnv || stage.stage == Stage::kPretrainSelf;

    if (pretrain && corpus.empty() && stage.iterations > 0) {
      corpus = random_walk_windows(scenes, cfg.sim, W, cfg.pretrain.envs, cfg.pretrain.steps,
                                   episode_seed(seed, 0x9e7, 0));
    }
    if (!pretrain && !venv && stage.iterations > 0) {
      venv = std::make_unique<VecEnv>(scenes, cfg.rollout.n_envs, W, cfg.sim, cfg.rollout.mode,
                                      episode_seed(seed, 0xe4, 0));
    }
    bool first_joint_batch = true;

    for (std::size_t it = 0; it < stage.iterations; ++it, ++iteration) {
      IterLog row;
      row.iteration = iteration;
      row.stage = stage.stage;
      if (pretrain) {
        const std::size_t count = corpus.size() / (W * obs_dim);
        std::uniform_int_distribution<std::size_t> pick(0, count - 1);
        const std::size_t B = cfg.pretrain.batch;
        std::vector<double> raw(B * W * obs_dim);
        for (std::size_t b = 0; b < B; ++b) {
          const std::size_t k = pick(rng);
          std::copy(corpus.begin() + k * W * obs_dim, corpus.begin() + (k + 1) * W * obs_dim,
                    raw.begin() + b * W * obs_dim);
        }
        const auto batch = model::batch_from_raw(raw, B, W, schema);
        ad::Graph g;
        Ctx c{g, params};
        Var loss;
        if (stage.stage == Stage::kPretrainEnv) {
          loss = loss_env_pretrain(c, cfg.model, cfg.variant, c.c(batch.env));
        } else {
          const Var obs_self = c.c(batch.self);
          const auto enc = model::self_encode(c, cfg.model, cfg.variant, obs_self);
          loss = temporal_prediction_loss(enc.z_self, [&](Var z) { return model::mlp2(c, z, "aux.f_pred"); });
          // Warm up the self decoder on detached latents so the semantic
          // regularizer starts from a fitted reconstruction.
          const Var z_fixed = c.c(enc.z_self.value());
          loss = ad::add(loss, reconstruction_loss(model::mlp2(c, z_fixed, "aux.dec_self"), obs_self));
        }
        row.loss = loss.value().item();
        if (std::isfinite(row.loss)) {
          params.zero_grad();
          g.backward(loss);
          opt.step();
        }
        params.zero_grad();
      } else {
        RolloutBatch rb = collect_rollout(*venv, params, cfg.model, cfg.variant, schema, cfg.rollout, rng);
        LossComposer compose;
        if (stage.stage == Stage::kFusion) {
          compose = [&](const Ctx& c, const Forward& f, const model::Batch&, Var task, PpoStats&) {
            return loss_fusion_stage(c, task, f, stage.weights, cfg.fusion_target);
          };
        } else {
          compose = [&](const Ctx& c, const Forward& f, const model::Batch& b, Var task, PpoStats& st) {
            const Regularizers r = specialization_regularizers(c, f, b, stage.weights);
            st.r_decouple = r.decouple.value().item();
            st.r_temporal = r.temporal.value().item();
            st.r_semantic = r.semantic.value().item();
            for (double v : {st.r_decouple, st.r_temporal, st.r_semantic}) {
              if (v < 0.0) throw std::logic_error("regularizer evaluated negative");
            }
            if (first_joint_batch) {
              first_joint_batch = false;
              const double weighted = stage.weights.decouple * st.r_decouple +
                                      stage.weights.temporal * st.r_temporal +
                                      stage.weights.semantic * st.r_semantic;
              const double task_abs = std::abs(task.value().item());
              res.regularizer_ratio = task_abs > 0.0 ? weighted / task_abs : std::numeric_limits<double>::infinity();
              if (weighted > 0.1 * task_abs) {
                warn("weighted regularizers " + std::to_string(weighted) + " exceed 10% of the task loss " +
                     std::to_string(task_abs));
              }
            }
            return loss_joint(task, r, stage.weights);
          };
        }
        row.ppo = ppo_update(rb, params, opt, cfg.model, cfg.variant, schema, cfg.ppo, rng, compose);
        row.loss = row.ppo.loss;
        double rsum = 0.0;
        for (double r : rb.rewards) rsum += r;
        row.mean_reward = rsum / static_cast<double>(rb.rewards.size());
        fill_episode_stats(row, rb.finished);
        if (row.ppo.skipped > 0) warn(std::to_string(row.ppo.skipped) + " minibatch update(s) skipped: non-finite loss");
      }
      if (csv.is_open()) {
        write_log_row(csv, row);
        csv.flush();
      }
      if (cfg.on_iteration) cfg.on_iteration(row);
      res.log.push_back(row);
    }

    StageCheckpoint ck;
    ck.stage = stage.stage;
    ck.hash = params.hash();
    ck.env_hash = params.hash(ad::ParamGroup::kEnv);
    ck.self_hash = params.hash(ad::ParamGroup::kSelf);
    if (!cfg.out_dir.empty()) {
      ck.file = cfg.out_dir / "checkpoints" /
                (std::to_string(si) + "_" + std::string(stage_name(stage.stage)) + ".bin");
      params.save(ck.file);
    }
    res.checkpoints.push_back(ck);
  }
  for (auto g : {ad::ParamGroup::kEnv, ad::ParamGroup::kSelf, ad::ParamGroup::kFusion, ad::ParamGroup::kTrunk,
                 ad::ParamGroup::kHeads, ad::ParamGroup::kAux}) {
    params.set_frozen(g, false);
  }
  return res;
}

}  // namespace detach::train
