#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>

#include "detach/ad/grad_check.hpp"
#include "detach/train/protocol.hpp"
#include "model_fixtures.hpp"

namespace ad = detach::ad;
namespace m = detach::model;
namespace sim = detach::sim;
namespace tr = detach::train;
using ad::Graph;
using ad::Tensor;
using ad::Var;
using fixtures::randn;

namespace {

// relu(x W1 + b1) W2 + b2 over the last axis, written out by hand.
std::vector<double> mlp2_ref(const ad::ParamTree& t, const std::string& p, const std::vector<double>& x) {
  const auto& w1 = t.get(p + ".w1").value;
  const auto& b1 = t.get(p + ".b1").value;
  const auto& w2 = t.get(p + ".w2").value;
  const auto& b2 = t.get(p + ".b2").value;
  std::vector<double> h(w1.dim(1)), y(w2.dim(1));
  for (std::size_t j = 0; j < h.size(); ++j) {
    double s = b1[j];
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * w1.at(i, j);
    h[j] = std::max(0.0, s);
  }
  for (std::size_t j = 0; j < y.size(); ++j) {
    double s = b2[j];
    for (std::size_t i = 0; i < h.size(); ++i) s += h[i] * w2.at(i, j);
    y[j] = s;
  }
  return y;
}

std::vector<double> row(const Tensor& t, std::size_t b, std::size_t s) {
  const std::size_t T = t.dim(1), d = t.dim(2);
  const auto data = t.data();
  return {data.begin() + (b * T + s) * d, data.begin() + (b * T + s + 1) * d};
}

void zero_param(ad::ParamTree& t, const std::string& name) { t.get(name).value.fill(0.0); }

// Population Pearson correlation energy, coded directly.
double corr_energy_ref(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.dim(0);
  auto standardize = [n](const Tensor& x, std::size_t j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += x.at(i, j);
    mean /= n;
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (x.at(i, j) - mean) * (x.at(i, j) - mean);
    var /= n;
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = (x.at(i, j) - mean) / std::sqrt(var + 1e-12);
    return out;
  };
  double total = 0.0;
  for (std::size_t p = 0; p < a.dim(1); ++p) {
    const auto u = standardize(a, p);
    for (std::size_t q = 0; q < b.dim(1); ++q) {
      const auto v = standardize(b, q);
      double c = 0.0;
      for (std::size_t i = 0; i < n; ++i) c += u[i] * v[i];
      c /= n;
      total += c * c;
    }
  }
  return total;
}

std::shared_ptr<const sim::SceneSpec> scene(const std::string& name) {
  return std::make_shared<const sim::SceneSpec>(sim::build_scene_file(std::string(DETACH_CONFIG_DIR) + "/" + name + ".json"));
}

// Smallest model that consumes the simulator observation.
m::ModelConfig sim_tiny() {
  m::ModelConfig c;
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

tr::StageConfig stage(tr::Stage s, std::size_t iterations) {
  tr::StageConfig c;
  c.stage = s;
  c.iterations = iterations;
  return c;
}

tr::ProtocolConfig tiny_protocol(std::size_t iters) {
  tr::ProtocolConfig p;
  p.model = sim_tiny();
  p.rollout.n_envs = 4;
  p.rollout.horizon = 8;
  p.ppo.minibatch = 16;
  p.ppo.epochs = 2;
  p.pretrain = {4, 16, 8};
  p.stages = {stage(tr::Stage::kPretrainEnv, iters), stage(tr::Stage::kPretrainSelf, iters),
              stage(tr::Stage::kFusion, iters), stage(tr::Stage::kJoint, iters)};
  p.warn = [](const std::string&) {};
  return p;
}

}  // namespace

TEST(Losses, ReconstructionMatchesFormula) {
  std::mt19937_64 rng(1);
  const Tensor a = randn(rng, {3, 4, 5}), b = randn(rng, {3, 4, 5});
  Graph g;
  const double got = tr::reconstruction_loss(g.constant(a), g.constant(b)).value().item();
  double want = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) want += (a[i] - b[i]) * (a[i] - b[i]);
  want /= 12.0;
  EXPECT_NEAR(got, want, 1e-10);
}

TEST(Losses, EnvPretrainZeroDecoderAndFormula) {
  auto cfg = fixtures::tiny_config();
  cfg.d_env = 4;
  auto tree = m::init_params(cfg, m::Variant::kFull, 3);
  fixtures::randomize(tree, 4, 0.4);
  std::mt19937_64 rng(5);
  const Tensor obs = randn(rng, {2, cfg.window, cfg.d_env});

  Graph g;
  m::Ctx c{g, tree};
  const double loss = tr::loss_env_pretrain(c, cfg, m::Variant::kFull, c.c(obs)).value().item();
  const Tensor z = m::env_encode(c, cfg, m::Variant::kFull, c.c(obs)).z_env.value();
  double want = 0.0;
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t t = 0; t < cfg.window; ++t) {
      const auto y = mlp2_ref(tree, "aux.dec_env", row(z, b, t));
      const auto o = row(obs, b, t);
      for (std::size_t j = 0; j < y.size(); ++j) want += (y[j] - o[j]) * (y[j] - o[j]);
    }
  }
  EXPECT_NEAR(loss, want / (2.0 * cfg.window), 1e-10);

  zero_param(tree, "aux.dec_env.w2");
  zero_param(tree, "aux.dec_env.b2");
  Graph g2;
  m::Ctx c2{g2, tree};
  double sq = 0.0;
  for (double v : obs.data()) sq += v * v;
  EXPECT_NEAR(tr::loss_env_pretrain(c2, cfg, m::Variant::kFull, c2.c(obs)).value().item(), sq / (2.0 * cfg.window),
              1e-12);
}

TEST(Losses, SelfPretrainFormulaAndZeroPredictor) {
  auto cfg = fixtures::tiny_config();
  cfg.window = 4;
  auto tree = m::init_params(cfg, m::Variant::kFull, 6);
  fixtures::randomize(tree, 7, 0.4);
  std::mt19937_64 rng(8);
  const Tensor obs = randn(rng, {3, cfg.window, cfg.d_self});

  Graph g;
  m::Ctx c{g, tree};
  const double loss = tr::loss_self_pretrain(c, cfg, m::Variant::kFull, c.c(obs)).value().item();
  const Tensor z = m::self_encode(c, cfg, m::Variant::kFull, c.c(obs)).z_self.value();
  double want = 0.0;
  for (std::size_t b = 0; b < 3; ++b) {
    for (std::size_t t = 0; t + 1 < cfg.window; ++t) {
      const auto p = mlp2_ref(tree, "aux.f_pred", row(z, b, t));
      const auto nx = row(z, b, t + 1);
      for (std::size_t j = 0; j < p.size(); ++j) want += (nx[j] - p[j]) * (nx[j] - p[j]);
    }
  }
  EXPECT_NEAR(loss, want / 3.0, 1e-10);

  zero_param(tree, "aux.f_pred.w2");
  zero_param(tree, "aux.f_pred.b2");
  Graph g2;
  m::Ctx c2{g2, tree};
  double sq = 0.0;
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t t = 1; t < cfg.window; ++t)
      for (double v : row(z, b, t)) sq += v * v;
  EXPECT_NEAR(tr::loss_self_pretrain(c2, cfg, m::Variant::kFull, c2.c(obs)).value().item(), sq / 3.0, 1e-10);
}

TEST(Losses, TemporalPredictionIdentityOnConstantSeriesIsZero) {
  Tensor z({2, 5, 3});
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t t = 0; t < 5; ++t)
      for (std::size_t j = 0; j < 3; ++j) z[(b * 5 + t) * 3 + j] = 1.0 + b + 0.5 * j;
  Graph g;
  EXPECT_EQ(tr::temporal_prediction_loss(g.constant(z), [](Var x) { return x; }).value().item(), 0.0);
  EXPECT_EQ(tr::temporal_penalty(g.constant(z)).value().item(), 0.0);
}

TEST(Losses, ShortSeriesRejected) {
  Graph g;
  EXPECT_THROW(tr::temporal_penalty(g.constant(Tensor({2, 1, 3}))), std::invalid_argument);
  auto cfg = fixtures::tiny_config();
  cfg.window = 1;
  auto tree = m::init_params(cfg, m::Variant::kFull, 9);
  m::Ctx c{g, tree};
  EXPECT_THROW(tr::loss_self_pretrain(c, cfg, m::Variant::kFull, c.c(Tensor({2, 1, cfg.d_self}))),
               std::invalid_argument);
}

TEST(Losses, TemporalPenaltyMatchesFormula) {
  std::mt19937_64 rng(10);
  const Tensor z = randn(rng, {3, 4, 2});
  Graph g;
  double want = 0.0;
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t j = 0; j < 2; ++j) {
        const double d = z[(b * 4 + t + 1) * 2 + j] - z[(b * 4 + t) * 2 + j];
        want += d * d;
      }
  EXPECT_NEAR(tr::temporal_penalty(g.constant(z)).value().item(), want / 3.0, 1e-12);
}

class FusionStage : public ::testing::Test {
 protected:
  void SetUp() override {
    cfg = fixtures::tiny_config();
    tree = m::init_params(cfg, m::Variant::kFull, 11);
    fixtures::randomize(tree, 12, 0.4);
    std::mt19937_64 rng(13);
    batch = fixtures::random_batch(rng, cfg, 3);
    target = randn(rng, {3, cfg.d_model});
    tree.set_frozen(ad::ParamGroup::kEnv, true);
    tree.set_frozen(ad::ParamGroup::kSelf, true);
  }
  m::ModelConfig cfg;
  ad::ParamTree tree;
  m::Batch batch;
  Tensor target;
};

TEST_F(FusionStage, ZeroWeightReturnsTaskLoss) {
  Graph g;
  m::Ctx c{g, tree};
  const auto f = m::forward(c, cfg, m::Variant::kFull, batch);
  const Var task = c.c(Tensor::scalar(0.37));
  tr::LossWeights w;
  EXPECT_EQ(tr::loss_fusion_stage(c, task, f, w, {}).value().item(), 0.37);
}

TEST_F(FusionStage, QualityTermMatchesFormula) {
  Graph g;
  m::Ctx c{g, tree};
  const auto f = m::forward(c, cfg, m::Variant::kFull, batch);
  const Var task = c.c(Tensor::scalar(0.37));
  tr::LossWeights w;
  w.quality = 0.1;
  const double got = tr::loss_fusion_stage(c, task, f, w, [&](const Tensor&) { return target; }).value().item();
  const Tensor& a = f.f_cross.value();
  double sq = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) sq += (a[i] - target[i]) * (a[i] - target[i]);
  EXPECT_NEAR(got, 0.37 + 0.1 * sq / 3.0, 1e-10);

  const double same = tr::loss_fusion_stage(c, task, f, w, [](const Tensor& att) { return att; }).value().item();
  EXPECT_EQ(same, 0.37);
}

TEST_F(FusionStage, UnfrozenEncoderRejected) {
  tree.set_frozen(ad::ParamGroup::kSelf, false);
  Graph g;
  m::Ctx c{g, tree};
  const auto f = m::forward(c, cfg, m::Variant::kFull, batch);
  EXPECT_THROW(tr::loss_fusion_stage(c, c.c(Tensor::scalar(0.0)), f, {}, {}), std::logic_error);
}

TEST_F(FusionStage, EncoderGradientsExactlyZero) {
  tree.zero_grad();
  Graph g;
  m::Ctx c{g, tree};
  const auto f = m::forward(c, cfg, m::Variant::kFull, batch);
  tr::LossWeights w;
  w.quality = 0.5;
  const Var task = ad::sum(ad::square(f.out.mean));
  g.backward(tr::loss_fusion_stage(c, task, f, w, [&](const Tensor&) { return target; }));
  EXPECT_EQ(tree.grad_norm(ad::ParamGroup::kEnv), 0.0);
  EXPECT_EQ(tree.grad_norm(ad::ParamGroup::kSelf), 0.0);
  EXPECT_GT(tree.grad_norm(ad::ParamGroup::kFusion), 0.0);
}

TEST(Decouple, MatchesDirectCorrelationOracle) {
  std::mt19937_64 rng(14);
  const Tensor a = randn(rng, {16, 3}), b = randn(rng, {16, 4});
  Graph g;
  EXPECT_NEAR(tr::decouple_penalty(g.constant(a), g.constant(b)).value().item(), corr_energy_ref(a, b), 1e-10);
}

TEST(Decouple, IndependentStreamsBelowNoiseBound) {
  std::mt19937_64 rng(15);
  const Tensor a = randn(rng, {4096, 8}), b = randn(rng, {4096, 8});
  Graph g;
  EXPECT_LT(tr::decouple_penalty(g.constant(a), g.constant(b)).value().item(), 0.05 * 64);
}

TEST(Decouple, DuplicatedStreamsAtLeastDimension) {
  std::mt19937_64 rng(16);
  const Tensor a = randn(rng, {512, 8});
  Graph g;
  EXPECT_GE(tr::decouple_penalty(g.constant(a), g.constant(a)).value().item(), 8.0 - 1e-9);
}

TEST(Decouple, InvariantToPerFeatureAffineMaps) {
  std::mt19937_64 rng(17);
  const Tensor a = randn(rng, {64, 3}), b = randn(rng, {64, 5});
  std::uniform_real_distribution<double> scale(0.2, 5.0), shift(-3.0, 3.0);
  for (int draw = 0; draw < 20; ++draw) {
    Tensor a2 = a, b2 = b;
    for (std::size_t j = 0; j < 3; ++j) {
      const double s = scale(rng) * (draw % 2 ? -1.0 : 1.0), o = shift(rng);
      for (std::size_t i = 0; i < 64; ++i) a2.at(i, j) = s * a.at(i, j) + o;
    }
    for (std::size_t j = 0; j < 5; ++j) {
      const double s = scale(rng), o = shift(rng);
      for (std::size_t i = 0; i < 64; ++i) b2.at(i, j) = s * b.at(i, j) + o;
    }
    Graph g;
    EXPECT_NEAR(tr::decouple_penalty(g.constant(a), g.constant(b)).value().item(),
                tr::decouple_penalty(g.constant(a2), g.constant(b2)).value().item(), 1e-9);
  }
}

TEST(Decouple, ZeroVarianceColumnReportedNotFatal) {
  std::mt19937_64 rng(18);
  Tensor a = randn(rng, {32, 3});
  const Tensor b = randn(rng, {32, 2});
  for (std::size_t i = 0; i < 32; ++i) a.at(i, 1) = 4.0;
  Graph g;
  std::size_t zeros = 0;
  const Var a_var = g.leaf(a);
  const Var r = tr::decouple_penalty(a_var, g.constant(b), &zeros);
  EXPECT_EQ(zeros, 1u);
  EXPECT_TRUE(std::isfinite(r.value().item()));
  Tensor without({32, 2});
  for (std::size_t i = 0; i < 32; ++i) {
    without.at(i, 0) = a.at(i, 0);
    without.at(i, 1) = a.at(i, 2);
  }
  EXPECT_NEAR(r.value().item(), corr_energy_ref(without, b), 1e-10);
  g.backward(r);
  EXPECT_TRUE(g.grad(a_var).all_finite());
}

TEST(Decouple, SmallBatchRejected) {
  std::mt19937_64 rng(19);
  Graph g;
  EXPECT_THROW(tr::decouple_penalty(g.constant(randn(rng, {7, 2})), g.constant(randn(rng, {7, 2}))),
               std::invalid_argument);
}

TEST(Regularizers, SemanticMatchesFormulaAndAllNonNegative) {
  auto cfg = fixtures::tiny_config();
  auto tree = m::init_params(cfg, m::Variant::kFull, 20);
  fixtures::randomize(tree, 21, 0.4);
  std::mt19937_64 rng(22);
  const auto batch = fixtures::random_batch(rng, cfg, 8);
  Graph g;
  m::Ctx c{g, tree};
  const auto f = m::forward(c, cfg, m::Variant::kFull, batch);
  tr::LossWeights w;
  w.alpha = 0.7;
  w.beta = 1.3;
  const auto r = tr::specialization_regularizers(c, f, batch, w);
  const Tensor& ze = f.env.z_env.value();
  const Tensor& zs = f.self.z_self.value();
  double env = 0.0, self = 0.0;
  for (std::size_t b = 0; b < 8; ++b) {
    for (std::size_t t = 0; t < cfg.window; ++t) {
      const auto ye = mlp2_ref(tree, "aux.dec_env", row(ze, b, t));
      const auto oe = row(batch.env, b, t);
      for (std::size_t j = 0; j < ye.size(); ++j) env += (ye[j] - oe[j]) * (ye[j] - oe[j]);
      const auto ys = mlp2_ref(tree, "aux.dec_self", row(zs, b, t));
      const auto os = row(batch.self, b, t);
      for (std::size_t j = 0; j < ys.size(); ++j) self += (ys[j] - os[j]) * (ys[j] - os[j]);
    }
  }
  const double n = 8.0 * cfg.window;
  EXPECT_NEAR(r.semantic.value().item(), 0.7 * env / n + 1.3 * self / n, 1e-10);
  EXPECT_GE(r.decouple.value().item(), 0.0);
  EXPECT_GE(r.temporal.value().item(), 0.0);
}

TEST(JointLoss, WeightedSumExamples) {
  Graph g;
  const Var task = g.constant(Tensor::scalar(2.5));
  tr::Regularizers r;
  r.decouple = g.constant(Tensor::scalar(0.2));
  r.temporal = g.constant(Tensor::scalar(0.3));
  r.semantic = g.constant(Tensor::scalar(0.5));
  tr::LossWeights w;
  w.decouple = w.temporal = w.semantic = 1.0;
  EXPECT_NEAR(tr::loss_joint(task, r, w).value().item(), 3.5, 1e-15);
  w.decouple = w.temporal = w.semantic = 0.0;
  EXPECT_EQ(tr::loss_joint(task, r, w).value().item(), 2.5);
  tr::Regularizers zero{g.constant(Tensor::scalar(0.0)), g.constant(Tensor::scalar(0.0)),
                        g.constant(Tensor::scalar(0.0))};
  EXPECT_EQ(tr::loss_joint(task, zero, tr::LossWeights{}).value().item(), 2.5);
}

TEST(JointLoss, NegativeWeightRejected) {
  Graph g;
  const Var s = g.constant(Tensor::scalar(0.0));
  tr::LossWeights w;
  w.temporal = -1e-3;
  EXPECT_THROW(tr::loss_joint(s, {s, s, s}, w), std::invalid_argument);
  w.temporal = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(w.validate(), std::invalid_argument);
}

TEST(LossGradients, AllLossFunctionsPassGradCheck) {
  std::mt19937_64 rng(23);
  const Tensor target = randn(rng, {2, 3, 4});
  auto check = [](const ad::GradCheckResult& r) {
    ASSERT_TRUE(r.ok) << r.message;
    EXPECT_LT(r.max_rel_error, 1e-4) << r.message;
  };
  check(ad::grad_check([&](Graph& g, Var x) { return tr::reconstruction_loss(x, g.constant(target)); },
                       randn(rng, {2, 3, 4})));
  check(ad::grad_check([](Graph&, Var x) { return tr::temporal_penalty(x); }, randn(rng, {2, 3, 4})));
  const Tensor other = randn(rng, {10, 3});
  check(ad::grad_check([&](Graph& g, Var x) { return tr::decouple_penalty(x, g.constant(other)); },
                       randn(rng, {10, 2})));

  const Tensor act = randn(rng, {4, 3}), old = randn(rng, {4}), adv = randn(rng, {4});
  check(ad::grad_check(
      [&](Graph& g, Var x) {
        const Var mean = ad::slice(x, 0, 0, 4);
        const Var log_std = ad::reshape(ad::slice(x, 0, 4, 1), {3});
        const Var lp = tr::gaussian_log_prob(mean, log_std, g.constant(act));
        const Var ratio = ad::exp(ad::sub(lp, g.constant(old)));
        return tr::clipped_surrogate_loss(ratio, g.constant(adv), 0.2);
      },
      randn(rng, {5, 3}, 0.3)));

  auto cfg = fixtures::tiny_config();
  auto tree = m::init_params(cfg, m::Variant::kFull, 24);
  fixtures::randomize(tree, 25, 0.4);
  const auto batch = fixtures::random_batch(rng, cfg, 8);
  for (auto* p : tree.all()) {
    if (p->group != ad::ParamGroup::kEnv && p->group != ad::ParamGroup::kSelf && p->group != ad::ParamGroup::kAux) {
      tree.set_frozen(p->group, true);
    }
  }
  check(ad::grad_check_params(
      [&](Graph& g, ad::ParamTree& t) {
        m::Ctx c{g, t};
        return ad::add(tr::loss_env_pretrain(c, cfg, m::Variant::kFull, c.c(batch.env)),
                       tr::loss_self_pretrain(c, cfg, m::Variant::kFull, c.c(batch.self)));
      },
      tree, 1e-6, 3));
  check(ad::grad_check_params(
      [&](Graph& g, ad::ParamTree& t) {
        m::Ctx c{g, t};
        const auto f = m::forward(c, cfg, m::Variant::kFull, batch);
        const auto r = tr::specialization_regularizers(c, f, batch, tr::LossWeights{});
        return tr::loss_joint(ad::sum(f.out.value), r, {0.0, 1.0, 1.0, 1.0, 1.0, 1.0});
      },
      tree, 1e-6, 3));
}

TEST(Ppo, GaussianLogProbMatchesScalarVersion) {
  std::mt19937_64 rng(26);
  const Tensor mean = randn(rng, {5, 4}), log_std = randn(rng, {4}, 0.5), act = randn(rng, {5, 4});
  Graph g;
  const Tensor lp = tr::gaussian_log_prob(g.constant(mean), g.constant(log_std), g.constant(act)).value();
  for (std::size_t b = 0; b < 5; ++b) {
    m::ActionDist d;
    std::vector<double> a;
    double ref = 0.0;
    for (std::size_t j = 0; j < 4; ++j) {
      d.mean.push_back(mean.at(b, j));
      d.log_std.push_back(log_std[j]);
      a.push_back(act.at(b, j));
      const double z = (act.at(b, j) - mean.at(b, j)) / std::exp(log_std[j]);
      ref += -0.5 * z * z - log_std[j] - 0.5 * std::log(2.0 * std::numbers::pi);
    }
    EXPECT_NEAR(lp[b], ref, 1e-10);
    EXPECT_NEAR(lp[b], m::gaussian_log_prob(d, a), 1e-10);
  }
}

TEST(Ppo, ClipUsesBoundedRatio) {
  Graph g;
  const Var r = g.leaf(Tensor({1}, std::vector<double>{1.5}));
  const Var loss = tr::clipped_surrogate_loss(r, g.constant(Tensor({1}, std::vector<double>{2.0})), 0.2);
  EXPECT_NEAR(loss.value().item(), -1.2 * 2.0, 1e-15);
  g.backward(loss);
  EXPECT_EQ(g.grad(r)[0], 0.0);

  Graph g2;
  const Var r2 = g2.leaf(Tensor({1}, std::vector<double>{1.5}));
  const Var neg = tr::clipped_surrogate_loss(r2, g2.constant(Tensor({1}, std::vector<double>{-2.0})), 0.2);
  EXPECT_NEAR(neg.value().item(), 1.5 * 2.0, 1e-15);
}

TEST(Ppo, NormalizedAdvantages) {
  const auto n = tr::normalize_advantages({1.0, 2.0, 3.0, 6.0});
  double mean = 0.0, var = 0.0;
  for (double v : n) mean += v;
  mean /= 4.0;
  for (double v : n) var += (v - mean) * (v - mean);
  EXPECT_NEAR(mean, 0.0, 1e-15);
  EXPECT_NEAR(var / 4.0, 1.0, 1e-12);
  const auto flat = tr::normalize_advantages({0.5, 0.5, 0.5});
  for (double v : flat) EXPECT_EQ(v, 0.0);
}

class PpoBatch : public ::testing::Test {
 protected:
  void SetUp() override {
    cfg = sim_tiny();
    tree = m::init_params(cfg, m::Variant::kFull, 30);
    venv = std::make_unique<tr::VecEnv>(tr::SceneList{scene("follow")}, 4, cfg.window, sim::SimParams{},
                                        sim::Mode::kTrain, 31);
    rcfg.n_envs = 4;
    rcfg.horizon = 8;
    schema = tr::sim_schema(venv->obs_dim());
    std::mt19937_64 rng(32);
    batch = tr::collect_rollout(*venv, tree, cfg, m::Variant::kFull, schema, rcfg, rng);
  }

  // Forward pass over the whole rollout with its recorded masks.
  m::Batch model_batch() const {
    auto b = m::batch_from_raw(batch.obs, batch.size(), batch.window, schema);
    b.cross_keep = batch.cross_keep;
    return b;
  }

  m::ModelConfig cfg;
  ad::ParamTree tree;
  std::unique_ptr<tr::VecEnv> venv;
  tr::RolloutConfig rcfg;
  detach::obs::SeparationSchema schema;
  tr::RolloutBatch batch;
};

TEST_F(PpoBatch, RolloutLayoutIsConsistent) {
  EXPECT_NO_THROW(batch.validate());
  EXPECT_EQ(batch.size(), 32u);
  EXPECT_EQ(batch.obs_dim, static_cast<std::size_t>(sim::kSelfDim + sim::kEnvBaseDim));
}

TEST_F(PpoBatch, IdenticalPoliciesGiveUnitRatioAndZeroKl) {
  Graph g;
  m::Ctx c{g, tree};
  const auto f = m::forward(c, cfg, m::Variant::kFull, model_batch());
  const Tensor act({batch.size(), cfg.action_dim}, batch.actions);
  const Tensor old({batch.size()}, batch.log_probs), adv({batch.size()}, batch.advantages),
      ret({batch.size()}, batch.returns);
  const auto t = tr::ppo_loss(f, g.constant(act), old, adv, ret, tr::PpoConfig{});
  double kl = 0.0;
  for (double r : t.ratio.value().data()) {
    EXPECT_NEAR(r, 1.0, 1e-9);
    kl += (r - 1.0) - std::log(r);
  }
  EXPECT_NEAR(kl / batch.size(), 0.0, 1e-15);
}

TEST_F(PpoBatch, InfiniteClipEqualsUnclippedSurrogate) {
  std::mt19937_64 rng(33);
  fixtures::randomize(tree, 34, 0.2);  // move away from the behaviour policy so ratios differ from 1
  Graph g;
  m::Ctx c{g, tree};
  const auto f = m::forward(c, cfg, m::Variant::kFull, model_batch());
  const Tensor act({batch.size(), cfg.action_dim}, batch.actions);
  const Tensor old({batch.size()}, batch.log_probs), adv = randn(rng, {batch.size()}),
      ret({batch.size()}, batch.returns);
  tr::PpoConfig inf;
  inf.clip = std::numeric_limits<double>::infinity();
  const auto t = tr::ppo_loss(f, g.constant(act), old, adv, ret, inf);
  double unclipped = 0.0;
  const Tensor& r = t.ratio.value();
  for (std::size_t i = 0; i < batch.size(); ++i) unclipped += r[i] * adv[i];
  EXPECT_NEAR(t.policy.value().item(), -unclipped / batch.size(), 1e-12);
}

TEST_F(PpoBatch, ZeroAdvantagesGiveNoPolicyGradient) {
  Graph g;
  m::Ctx c{g, tree};
  const auto f = m::forward(c, cfg, m::Variant::kFull, model_batch());
  const Tensor act({batch.size(), cfg.action_dim}, batch.actions);
  const Tensor old({batch.size()}, batch.log_probs), zero({batch.size()}), ret({batch.size()}, batch.returns);
  const auto t = tr::ppo_loss(f, g.constant(act), old, zero, ret, tr::PpoConfig{});
  EXPECT_EQ(t.policy.value().item(), 0.0);
  tree.zero_grad();
  g.backward(t.policy);
  for (const auto* p : tree.all())
    for (double v : p->grad.data()) ASSERT_EQ(v, 0.0) << p->name;
}

TEST_F(PpoBatch, ZeroAdvantageUpdateMovesOnlyValueAndEntropyPaths) {
  tr::RolloutBatch b = batch;
  std::fill(b.advantages.begin(), b.advantages.end(), 0.0);
  const Tensor mean_w = tree.get("heads.mu.w").value;
  const Tensor log_std = tree.get("heads.log_std").value;
  const Tensor value_w = tree.get("heads.v.w").value;
  tr::PpoConfig pc;
  pc.minibatch = 16;
  pc.epochs = 1;
  pc.normalize_advantages = false;
  tr::Adam opt(tree, {});
  std::mt19937_64 rng(35);
  const auto stats = tr::ppo_update(b, tree, opt, cfg, m::Variant::kFull, schema, pc, rng);
  EXPECT_EQ(stats.updates, 2u);
  EXPECT_EQ(tree.get("heads.mu.w").value, mean_w);
  EXPECT_EQ(tree.get("heads.log_std").value, log_std);
  EXPECT_NE(tree.get("heads.v.w").value, value_w);
}

TEST_F(PpoBatch, NonFiniteLossSkipsUpdate) {
  tr::RolloutBatch b = batch;
  b.log_probs[3] = std::numeric_limits<double>::quiet_NaN();
  const auto before = tree.hash();
  tr::PpoConfig pc;
  pc.minibatch = 32;
  pc.epochs = 1;
  tr::Adam opt(tree, {});
  std::mt19937_64 rng(36);
  const auto stats = tr::ppo_update(b, tree, opt, cfg, m::Variant::kFull, schema, pc, rng);
  EXPECT_EQ(stats.skipped, 1u);
  EXPECT_EQ(stats.updates, 0u);
  EXPECT_EQ(tree.hash(), before);
}

TEST(Gae, MatchesDiscountedSumOracle) {
  std::mt19937_64 rng(40);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const std::size_t N = 3, H = 7;
  std::vector<double> r(N * H), v(N * H), last(N);
  std::vector<std::uint8_t> d(N * H, 0);
  for (auto& x : r) x = u(rng);
  for (auto& x : v) x = u(rng);
  for (auto& x : last) x = u(rng);
  d[2] = 1;
  d[H + 6] = 1;
  d[2 * H + 3] = d[2 * H + 4] = 1;
  const double gamma = 0.9, lambda = 0.8;
  std::vector<double> adv, ret;
  tr::compute_gae(r, v, d, last, N, H, gamma, lambda, adv, ret);
  for (std::size_t e = 0; e < N; ++e) {
    for (std::size_t t = 0; t < H; ++t) {
      // Sum of (gamma lambda)^l delta_{t+l} until the first terminal.
      double want = 0.0, w = 1.0;
      for (std::size_t s = t; s < H; ++s) {
        const std::size_t i = e * H + s;
        const double next = d[i] ? 0.0 : (s + 1 < H ? v[i + 1] : last[e]);
        want += w * (r[i] + gamma * next - v[i]);
        if (d[i]) break;
        w *= gamma * lambda;
      }
      EXPECT_NEAR(adv[e * H + t], want, 1e-12);
      EXPECT_NEAR(ret[e * H + t], want + v[e * H + t], 1e-12);
    }
  }
}

TEST(Adam, FirstStepMatchesFormulaAndSkipsFrozen) {
  ad::ParamTree t;
  t.add("a", ad::ParamGroup::kEnv, Tensor({2}, std::vector<double>{1.0, -2.0}));
  t.add("b", ad::ParamGroup::kSelf, Tensor({1}, std::vector<double>{0.5}));
  t.get("a").grad = Tensor({2}, std::vector<double>{0.1, -0.3});
  t.set_frozen(ad::ParamGroup::kSelf, true);
  tr::AdamConfig c;
  c.lr = 0.01;
  c.max_grad_norm = 0.0;
  tr::Adam opt(t, c);
  EXPECT_NEAR(opt.step(), std::sqrt(0.1), 1e-15);
  // Bias-corrected first step moves every coordinate by lr * sign(g).
  EXPECT_NEAR(t.get("a").value[0], 1.0 - 0.01 * 0.1 / (0.1 + 1e-8), 1e-15);
  EXPECT_NEAR(t.get("a").value[1], -2.0 + 0.01 * 0.3 / (0.3 + 1e-8), 1e-15);
  EXPECT_EQ(t.get("b").value[0], 0.5);
}

TEST(Adam, FrozenParameterWithGradientThrows) {
  ad::ParamTree t;
  t.add("a", ad::ParamGroup::kEnv, Tensor({1}, 1.0));
  t.get("a").grad[0] = 1e-30;
  t.set_frozen(ad::ParamGroup::kEnv, true);
  tr::Adam opt(t, {});
  EXPECT_THROW(opt.step(), std::logic_error);
}

TEST(Adam, GlobalNormClipScalesGradient) {
  ad::ParamTree t1, t2;
  for (auto* t : {&t1, &t2}) t->add("a", ad::ParamGroup::kEnv, Tensor({2}, 0.0));
  t1.get("a").grad = Tensor({2}, std::vector<double>{3.0, 4.0});
  t2.get("a").grad = Tensor({2}, std::vector<double>{0.3, 0.4});
  tr::AdamConfig c1, c2;
  c1.max_grad_norm = 0.5;
  c2.max_grad_norm = 0.0;
  tr::Adam o1(t1, c1), o2(t2, c2);
  EXPECT_NEAR(o1.step(), 5.0, 1e-15);
  o2.step();
  // Clipping to 0.5 equals feeding the scaled gradient directly.
  t1.get("a").grad = Tensor({2}, std::vector<double>{0.03, 0.04});
  t2.get("a").grad = Tensor({2}, std::vector<double>{0.03, 0.04});
  o1.step();
  o2.step();
  EXPECT_NEAR(t1.get("a").value[0], t2.get("a").value[0], 1e-15);
}

TEST(Protocol, StageOrderViolationRejected) {
  auto p = tiny_protocol(1);
  std::swap(p.stages[1], p.stages[2]);
  EXPECT_THROW(tr::run_protocol(p, {scene("follow")}, 1), std::invalid_argument);
  p = tiny_protocol(1);
  p.stages.push_back(stage(tr::Stage::kJoint, 1));
  EXPECT_THROW(tr::run_protocol(p, {scene("follow")}, 1), std::invalid_argument);
}

TEST(Protocol, NegativeWeightRejected) {
  auto p = tiny_protocol(1);
  p.stages[3].weights.semantic = -0.1;
  EXPECT_THROW(tr::run_protocol(p, {scene("follow")}, 1), std::invalid_argument);
}

TEST(Protocol, ZeroStepScheduleReturnsInitialization) {
  const auto p = tiny_protocol(0);
  const auto res = tr::run_protocol(p, {scene("follow")}, 7);
  EXPECT_EQ(res.params.hash(), m::init_params(p.model, m::Variant::kFull, 7).hash());
  EXPECT_TRUE(res.log.empty());
  EXPECT_EQ(res.checkpoints.size(), 4u);
}

TEST(Protocol, FusionStageLeavesEncodersBitwiseUnchanged) {
  const auto p = tiny_protocol(2);
  const auto res = tr::run_protocol(p, {scene("follow")}, 8);
  ASSERT_EQ(res.checkpoints.size(), 4u);
  const auto& pre = res.checkpoints[1];
  const auto& fusion = res.checkpoints[2];
  EXPECT_EQ(fusion.env_hash, pre.env_hash);
  EXPECT_EQ(fusion.self_hash, pre.self_hash);
  EXPECT_NE(fusion.hash, pre.hash);
  // Pretraining moved the encoders, joint training moves everything.
  EXPECT_NE(res.checkpoints[0].env_hash, m::init_params(p.model, m::Variant::kFull, 8).hash(ad::ParamGroup::kEnv));
  EXPECT_NE(res.checkpoints[3].env_hash, fusion.env_hash);
  EXPECT_TRUE(res.regularizer_ratio.has_value());
}

TEST(Protocol, FixedSeedIsBitwiseReproducible) {
  const auto p = tiny_protocol(2);
  const auto a = tr::run_protocol(p, {scene("follow")}, 9);
  const auto b = tr::run_protocol(p, {scene("follow")}, 9);
  EXPECT_EQ(a.params.hash(), b.params.hash());
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].loss, b.log[i].loss);
  const auto c = tr::run_protocol(p, {scene("follow")}, 10);
  EXPECT_NE(a.params.hash(), c.params.hash());
}

TEST(Protocol, WritesCheckpointsAndLog) {
  auto p = tiny_protocol(1);
  p.out_dir = std::filesystem::temp_directory_path() / "detach_protocol_test";
  std::filesystem::remove_all(p.out_dir);
  const auto res = tr::run_protocol(p, {scene("follow")}, 11);
  for (const auto& ck : res.checkpoints) {
    ASSERT_TRUE(std::filesystem::exists(ck.file));
    EXPECT_EQ(ad::ParamTree::load(ck.file).hash(), ck.hash);
  }
  std::ifstream log(p.out_dir / "train_log.csv");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(log, line)) ++lines;
  EXPECT_EQ(lines, 1 + res.log.size());
  std::filesystem::remove_all(p.out_dir);
}

TEST(Protocol, ModelWidthMismatchRejected) {
  auto p = tiny_protocol(1);
  p.model.d_env = 7;
  EXPECT_THROW(tr::run_protocol(p, {scene("follow")}, 1), std::invalid_argument);
}
