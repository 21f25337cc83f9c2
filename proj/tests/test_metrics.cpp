#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <sstream>

#include "detach/metrics/metrics.hpp"
#include "detach/sim/oracle.hpp"
#include "detach/train/rollout.hpp"

using namespace detach;
namespace mt = detach::metrics;

namespace {

sim::EpisodeResult episode(std::vector<sim::Skill> skills, std::vector<double> outcomes, double time = 10.0) {
  sim::EpisodeResult e;
  e.skills = std::move(skills);
  e.outcomes = std::move(outcomes);
  e.durations.assign(e.skills.size(), 1.0);
  e.total_time = time;
  return e;
}

const std::vector<sim::Skill> kLh1{sim::Skill::kTraj, sim::Skill::kCarry, sim::Skill::kClimb, sim::Skill::kSit};

std::shared_ptr<const sim::SceneSpec> scene(const std::string& name) {
  return std::make_shared<const sim::SceneSpec>(
      sim::build_scene_file(std::string(DETACH_CONFIG_DIR) + "/" + name + ".json"));
}

model::ModelConfig sim_tiny() {
  model::ModelConfig c;
  c.d_env = sim::kEnvBaseDim;
  c.d_self = sim::kSelfDim;
  c.action_dim = sim::kActionDim;
  c.window = 3;
  c.env_kernels = {3};
  c.env_branch_channels = 4;
  c.env_heads = 2;
  c.d_h = 3;
  c.d_model = 8;
  c.fusion_heads = 2;
  c.experts = 2;
  c.trunk_layers = 1;
  c.trunk_heads = 2;
  c.ffn_mult = 1;
  return c;
}

std::string csv(const std::vector<mt::EvalReport>& reports) {
  std::ostringstream os;
  mt::write_report_csv(os, reports);
  return os.str();
}

}  // namespace

TEST(LhRate, CountsFullSuccesses) {
  std::vector<sim::EpisodeResult> rs;
  for (int i = 0; i < 70; ++i) rs.push_back(episode(kLh1, {1, 1, 1, 1}));
  for (int i = 0; i < 30; ++i) rs.push_back(episode(kLh1, {1, 0.5, 0, 0}));
  EXPECT_DOUBLE_EQ(mt::lh_success_rate(rs), 0.70);
  EXPECT_THROW(mt::lh_success_rate({}), std::invalid_argument);
}

TEST(LhRate, MatchesBruteForce) {
  std::mt19937_64 rng(3);
  const double levels[] = {0.0, 0.5, 1.0};
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<sim::EpisodeResult> rs;
    const int n = 1 + static_cast<int>(rng() % 40);
    int brute = 0;
    for (int i = 0; i < n; ++i) {
      std::vector<double> o(4);
      for (double& x : o) x = levels[rng() % 3];
      bool all = true;
      for (double x : o) all = all && x == 1.0;
      brute += all;
      rs.push_back(episode(kLh1, o));
    }
    EXPECT_EQ(mt::lh_success_rate(rs), static_cast<double>(brute) / n);
  }
}

TEST(Generalization, EgrExamples) {
  EXPECT_NEAR(*mt::egr(0.70, 0.72), 0.9722, 1e-4);
  EXPECT_NEAR(*mt::egr(0.59, 0.72), 0.8194, 1e-4);
  EXPECT_DOUBLE_EQ(*mt::egr(0.5, 0.5), 1.0);
  EXPECT_FALSE(mt::egr(0.3, 0.0).has_value());
}

TEST(Generalization, SgrExamples) {
  // Absent sit contributes 0.
  EXPECT_NEAR(*mt::sgr(1.00, 0.96, 0.16, 0.0), 0.0816, 1e-4);
  EXPECT_NEAR(*mt::sgr(1.00, 0.95, 0.40, 0.10), 0.2564, 1e-4);
  EXPECT_DOUBLE_EQ(*mt::sgr(0.7, 0.7, 0.7, 0.7), 1.0);
  EXPECT_FALSE(mt::sgr(0.0, 0.0, 0.5, 0.5).has_value());
}

TEST(Generalization, ScaleFree) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.01, 1.0), cd(0.05, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const double a = u(rng), b = u(rng), c = u(rng), d = u(rng), k = cd(rng);
    EXPECT_NEAR(*mt::egr(a * k, b * k), *mt::egr(a, b), 1e-12);
    EXPECT_NEAR(*mt::sgr(a * k, b * k, c * k, d * k), *mt::sgr(a, b, c, d), 1e-12);
  }
}

TEST(Summarize, ColumnsAndRationals) {
  const std::vector<sim::Skill> lh2{sim::Skill::kTraj, sim::Skill::kCarry, sim::Skill::kTraj, sim::Skill::kClimb};
  std::vector<sim::EpisodeResult> rs;
  for (int i = 0; i < 7; ++i) rs.push_back(episode(lh2, {1, 1, 1, i < 3 ? 1.0 : 0.0}, 20.0));
  const auto r = mt::summarize("lh2", rs);
  EXPECT_EQ(r.column[0], 1.0);
  EXPECT_EQ(r.column[1], 1.0);
  EXPECT_EQ(r.column[2], 1.0);
  EXPECT_EQ(r.column[3], 3.0 / 7.0);
  EXPECT_FALSE(r.column[4].has_value());
  EXPECT_EQ(r.lh, 3.0 / 7.0);
  EXPECT_DOUBLE_EQ(r.mean_time, 20.0);
  EXPECT_EQ(mt::fmt2(r.column[3]), "0.43");
  EXPECT_EQ(mt::fmt2(std::nullopt), "-");
  EXPECT_EQ(mt::fmt2(0.7), "0.70");
}

TEST(Report, CsvColumnsExact) {
  std::vector<sim::EpisodeResult> rs{episode(kLh1, {1, 1, 1, 1})};
  const auto out = csv({mt::summarize("lh1", rs)});
  EXPECT_EQ(out.substr(0, out.find('\n')), "task,follow,carry,follow2,climb,sit,time_s,lh,sgr,egr");
}

TEST(Report, Lh2OracleNumbersGiveSgr008) {
  // 100 trials with the published LH2 rates: follow 1.00, carry 0.96, follow 0.67, sit 0.16.
  const std::vector<sim::Skill> plan{sim::Skill::kTraj, sim::Skill::kCarry, sim::Skill::kTraj, sim::Skill::kSit};
  std::vector<sim::EpisodeResult> rs;
  for (int i = 0; i < 100; ++i) {
    const double carry = i < 96 ? 1.0 : 0.0;
    rs.push_back(episode(plan, {1.0, carry, i < 67 ? 1.0 : 0.0, i < 16 ? 1.0 : 0.0}));
  }
  const auto r = mt::summarize("lh2", rs);
  EXPECT_EQ(mt::fmt2(r.sgr), "0.08");
}

TEST(RateTable, ParsesAndDerives) {
  std::ifstream f(std::string(DETACH_CONFIG_DIR) + "/reference_rates.csv");
  ASSERT_TRUE(f);
  const auto rows = mt::parse_rate_csv(f);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_FALSE(rows[1].column[3].has_value());  // no climb in lh2
  const auto d = mt::derive_rates(rows, "lh1");
  EXPECT_NEAR(*d[1].egr, 0.97, 0.005);
  EXPECT_NEAR(*d[1].sgr, 0.08, 0.005);
  EXPECT_NEAR(*d[2].sgr, 0.26, 0.005);
  // LH3: the stated SGR is not recomputable from its own row.
  bool sgr_warned = false;
  for (const auto& w : d[2].warnings) sgr_warned = sgr_warned || w.find("sgr") != std::string::npos;
  EXPECT_TRUE(sgr_warned);
  EXPECT_TRUE(d[1].warnings.empty());
}

TEST(RateTable, RejectsMalformed) {
  std::istringstream short_row("lh1,1,1\n");
  EXPECT_THROW(mt::parse_rate_csv(short_row), std::invalid_argument);
  std::istringstream bad("lh1,1,x,-,-,-,-,0.5,-,-\n");
  EXPECT_THROW(mt::parse_rate_csv(bad), std::invalid_argument);
  std::istringstream no_lh("lh1,1,1,-,-,-,-,-,-,-\n");
  EXPECT_THROW(mt::parse_rate_csv(no_lh), std::invalid_argument);
  std::istringstream rows("lh1,1,1,-,-,-,-,0.5,-,-\n");
  EXPECT_THROW(mt::derive_rates(mt::parse_rate_csv(rows), "lh9"), std::invalid_argument);
}

TEST(RunEval, OracleSucceedsEverywhere) {
  std::vector<mt::EvalTask> tasks{{"micro_l1", scene("micro_l1")}, {"micro_l3", scene("micro_l3")}};
  mt::ControllerPolicy oracle([] { return std::make_unique<sim::ScriptedOracle>(); });
  mt::EvalConfig cfg;
  cfg.trials = 6;
  cfg.lanes = 4;
  const auto reps = mt::run_eval(tasks, oracle, cfg);
  for (const auto& r : reps) {
    EXPECT_EQ(r.lh, 1.0) << r.task;
    for (double s : r.subtask_rate) EXPECT_EQ(s, 1.0);
    EXPECT_EQ(r.egr, 1.0);
  }
}

TEST(RunEval, RandomIsWellFormedAndDeterministic) {
  std::vector<mt::EvalTask> tasks{{"lh1", scene("lh1")}};
  mt::ControllerPolicy rnd([] { return std::make_unique<sim::RandomController>(); });
  mt::EvalConfig cfg;
  cfg.trials = 8;
  cfg.lanes = 3;
  cfg.seed = 7;
  std::vector<std::vector<sim::EpisodeResult>> eps;
  const auto a = mt::run_eval(tasks, rnd, cfg, 0, &eps);
  ASSERT_EQ(eps.size(), 1u);
  ASSERT_EQ(eps[0].size(), 8u);
  EXPECT_EQ(a[0].lh, 0.0);
  EXPECT_EQ(a[0].trials, 8u);
  EXPECT_GT(a[0].mean_time, 0.0);
  const auto b = mt::run_eval(tasks, rnd, cfg);
  EXPECT_EQ(csv(a), csv(b));
  // Lane count does not change results.
  cfg.lanes = 8;
  EXPECT_EQ(csv(a), csv(mt::run_eval(tasks, rnd, cfg)));
}

TEST(RunEval, NetworkPolicyDeterministic) {
  const auto cfg = sim_tiny();
  auto params = model::init_params(cfg, model::Variant::kFull, 5);
  const auto schema = train::sim_schema(cfg.d_self + cfg.d_env);
  mt::NetworkPolicy net(params, cfg, model::Variant::kFull, schema);
  std::vector<mt::EvalTask> tasks{{"follow", scene("follow")}};
  mt::EvalConfig ec;
  ec.trials = 4;
  ec.lanes = 2;
  ec.sim.traj_fail_distance = 1.0;  // keep untrained episodes short
  const auto a = csv(mt::run_eval(tasks, net, ec));
  ec.lanes = 4;
  EXPECT_EQ(a, csv(mt::run_eval(tasks, net, ec)));
}

TEST(Ablation, FullIsUnchanged) {
  const auto cfg = sim_tiny();
  const auto full = model::init_params(cfg, model::Variant::kFull, 11);
  EXPECT_EQ(mt::build_ablation(full, cfg, model::Variant::kFull, 11).hash(), full.hash());
}

TEST(Ablation, LinearReplacementIsSmallerAndSharesTheRest) {
  const auto cfg = sim_tiny();
  const auto full = model::init_params(cfg, model::Variant::kFull, 11);
  for (auto v : {model::Variant::kA1, model::Variant::kA2}) {
    const auto ab = mt::build_ablation(full, cfg, v, 11);
    EXPECT_LT(ab.numel(), full.numel());
    const auto kept = v == model::Variant::kA1 ? ad::ParamGroup::kSelf : ad::ParamGroup::kEnv;
    EXPECT_EQ(ab.hash(kept), full.hash(kept));
    EXPECT_EQ(ab.hash(ad::ParamGroup::kTrunk), full.hash(ad::ParamGroup::kTrunk));
    EXPECT_EQ(ab.hash(ad::ParamGroup::kHeads), full.hash(ad::ParamGroup::kHeads));
    // The ablated model still runs end to end.
    std::mt19937_64 rng(1);
    model::Batch b;
    b.env = ad::Tensor({2, cfg.window, cfg.d_env}, 0.1);
    b.self = ad::Tensor({2, cfg.window, cfg.d_self}, -0.1);
    auto copy = ab;
    const auto out = model::evaluate(copy, cfg, v, b);
    EXPECT_EQ(out.value.size(), 2u);
  }
}
