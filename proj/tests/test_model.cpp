#include <gtest/gtest.h>

#include <chrono>
#include <cmath>

#include "detach/ad/grad_check.hpp"
#include "model_fixtures.hpp"

namespace ad = detach::ad;
namespace m = detach::model;
using ad::Graph;
using ad::Tensor;
using ad::Var;
using fixtures::identity;
using fixtures::randn;

namespace {

// ---- environmental encoder ----

TEST(EnvEncoder, ZeroInputZeroBiasesGivesZero) {
  auto cfg = fixtures::tiny_config();
  auto tree = m::init_params(cfg, m::Variant::kFull, 1);
  Graph g;
  m::Ctx c{g, tree};
  auto e = m::env_encode(c, cfg, m::Variant::kFull, g.constant(Tensor({2, 3, 4})));
  for (double v : e.z_env.value().data()) EXPECT_NEAR(v, 0.0, 1e-3);
}

TEST(EnvEncoder, SingleStepAttentionIsOneAndResidualDoubles) {
  auto cfg = fixtures::tiny_config();
  cfg.window = 1;
  auto tree = m::init_params(cfg, m::Variant::kFull, 2);
  tree.get("env.attn.wv").value = identity(cfg.d_e());
  tree.get("env.attn.wo").value = identity(cfg.d_e());
  std::mt19937_64 rng(3);
  Graph g;
  m::Ctx c{g, tree};
  auto e = m::env_encode(c, cfg, m::Variant::kFull, g.constant(randn(rng, {2, 1, 4})));
  for (double w : e.attn_weights.value().data()) EXPECT_EQ(w, 1.0);
  Var want = ad::layer_norm(ad::scale(e.s_env, 2.0), cfg.ln_eps);
  for (std::size_t i = 0; i < want.value().numel(); ++i) EXPECT_NEAR(e.z_env.value()[i], want.value()[i], 1e-9);
}

TEST(EnvEncoder, AttentionRowsStochastic) {
  auto cfg = fixtures::tiny_config();
  cfg.window = 6;
  auto tree = m::init_params(cfg, m::Variant::kFull, 4);
  fixtures::randomize(tree, 5, 1.0);
  std::mt19937_64 rng(6);
  Graph g;
  m::Ctx c{g, tree};
  auto e = m::env_encode(c, cfg, m::Variant::kFull, g.constant(randn(rng, {3, 6, 4})));
  const Tensor& w = e.attn_weights.value();
  ASSERT_EQ(w.shape(), (ad::Shape{3 * cfg.env_heads, 6, 6}));
  for (std::size_t r = 0; r < w.numel() / 6; ++r) {
    double s = 0;
    for (std::size_t j = 0; j < 6; ++j) s += w[r * 6 + j];
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(EnvEncoder, ZeroOutputProjectionLeavesLayerNormOfS) {
  auto cfg = fixtures::tiny_config();
  auto tree = m::init_params(cfg, m::Variant::kFull, 7);
  fixtures::randomize(tree, 8);
  tree.get("env.attn.wo").value.fill(0.0);
  tree.get("env.attn.bo").value.fill(0.0);
  tree.get("env.ln.g").value.fill(1.0);
  tree.get("env.ln.b").value.fill(0.0);
  std::mt19937_64 rng(9);
  Graph g;
  m::Ctx c{g, tree};
  auto e = m::env_encode(c, cfg, m::Variant::kFull, g.constant(randn(rng, {2, 3, 4})));
  EXPECT_EQ(e.z_env.value(), ad::layer_norm(e.s_env, cfg.ln_eps).value());
}

TEST(EnvEncoder, BatchOrderEquivariantAndDeterministic) {
  auto cfg = fixtures::tiny_config();
  auto tree = m::init_params(cfg, m::Variant::kFull, 10);
  fixtures::randomize(tree, 11);
  std::mt19937_64 rng(12);
  const Tensor x = randn(rng, {3, 3, 4});
  Tensor xr = x;  // batch rows reversed
  const std::size_t row = 12;
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t i = 0; i < row; ++i) xr[b * row + i] = x[(2 - b) * row + i];
  Graph g;
  m::Ctx c{g, tree};
  const Tensor z1 = m::env_encode(c, cfg, m::Variant::kFull, g.constant(x)).z_env.value();
  const Tensor z2 = m::env_encode(c, cfg, m::Variant::kFull, g.constant(x)).z_env.value();
  const Tensor zr = m::env_encode(c, cfg, m::Variant::kFull, g.constant(xr)).z_env.value();
  EXPECT_EQ(z1, z2);
  const std::size_t out_row = 3 * cfg.d_e();
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t i = 0; i < out_row; ++i) EXPECT_NEAR(zr[b * out_row + i], z1[(2 - b) * out_row + i], 1e-12);
}

TEST(EnvEncoder, WidthMismatchRejected) {
  auto cfg = fixtures::tiny_config();
  auto tree = m::init_params(cfg, m::Variant::kFull, 1);
  Graph g;
  m::Ctx c{g, tree};
  EXPECT_THROW(m::env_encode(c, cfg, m::Variant::kFull, g.constant(Tensor({1, 3, 5}))), ad::ShapeError);
}

// ---- self encoder ----

TEST(SelfEncoder, ZeroGateGivesHalf) {
  auto cfg = fixtures::tiny_config();
  auto tree = m::init_params(cfg, m::Variant::kFull, 13);
  tree.get("self.gate.w").value.fill(0.0);
  tree.get("self.gate.b").value.fill(0.0);
  std::mt19937_64 rng(14);
  Graph g;
  m::Ctx c{g, tree};
  auto s = m::self_encode(c, cfg, m::Variant::kFull, g.constant(randn(rng, {2, 3, 4})));
  for (std::size_t i = 0; i < s.h_bi.value().numel(); ++i) EXPECT_EQ(s.z_self.value()[i], 0.5 * s.h_bi.value()[i]);
}

TEST(SelfEncoder, GateBoundHoldsOnThousandDraws) {
  auto cfg = fixtures::tiny_config();
  for (int d = 0; d < 1000; ++d) {
    auto tree = m::init_params(cfg, m::Variant::kFull, 100 + d);
    fixtures::randomize(tree, 5000 + d, 1.5);
    std::mt19937_64 rng(9000 + d);
    Graph g(false);
    m::Ctx c{g, tree};
    auto s = m::self_encode(c, cfg, m::Variant::kFull, g.constant(randn(rng, {1, 3, 4}, 2.0)));
    for (std::size_t i = 0; i < s.h_bi.value().numel(); ++i) {
      ASSERT_LE(std::abs(s.z_self.value()[i]), std::abs(s.h_bi.value()[i]));
    }
  }
}

TEST(SelfEncoder, TimeReversalWithSwappedCells) {
  auto cfg = fixtures::tiny_config();
  cfg.window = 5;
  auto tree = m::init_params(cfg, m::Variant::kFull, 15);
  fixtures::randomize(tree, 16);
  auto swapped = tree;
  for (const char* s : {".wx", ".wh", ".b"}) {
    swapped.get(std::string("self.fwd") + s).value = tree.get(std::string("self.bwd") + s).value;
    swapped.get(std::string("self.bwd") + s).value = tree.get(std::string("self.fwd") + s).value;
  }
  std::mt19937_64 rng(17);
  const Tensor x = randn(rng, {1, 5, 4});
  Tensor xr = x;
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t j = 0; j < 4; ++j) xr[t * 4 + j] = x[(4 - t) * 4 + j];
  Graph g;
  m::Ctx c1{g, tree}, c2{g, swapped};
  const Tensor h = m::self_encode(c1, cfg, m::Variant::kFull, g.constant(x)).h_bi.value();
  const Tensor hr = m::self_encode(c2, cfg, m::Variant::kFull, g.constant(xr)).h_bi.value();
  const std::size_t dh = cfg.d_h;
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t j = 0; j < dh; ++j) {
      EXPECT_DOUBLE_EQ(hr[t * 2 * dh + j], h[(4 - t) * 2 * dh + dh + j]);
      EXPECT_DOUBLE_EQ(hr[t * 2 * dh + dh + j], h[(4 - t) * 2 * dh + j]);
    }
}

TEST(SelfEncoder, NanRecurrenceReportsStep) {
  auto cfg = fixtures::tiny_config();
  auto tree = m::init_params(cfg, m::Variant::kFull, 18);
  Tensor x({1, 3, 4}, 0.0);
  x[4] = std::nan("");
  Graph g;
  m::Ctx c{g, tree};
  try {
    m::self_encode(c, cfg, m::Variant::kFull, g.constant(x));
    FAIL();
  } catch (const m::NonFiniteError& e) {
    EXPECT_EQ(e.stage(), "self_encode");
    EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos) << e.what();
  }
}

// ---- projections ----

TEST(Projection, IdentityAndBiasAndMatmulOracle) {
  auto cfg = fixtures::tiny_config();
  cfg.d_model = cfg.d_e();
  cfg.fusion_heads = 2;
  cfg.trunk_heads = 2;
  auto tree = m::init_params(cfg, m::Variant::kFull, 19);
  tree.get("fusion.p_env.w").value = identity(cfg.d_e());
  std::mt19937_64 rng(20);
  Graph g;
  m::Ctx c{g, tree};
  const Tensor z = randn(rng, {2, cfg.d_e()});
  EXPECT_EQ(m::project(c, g.constant(z), m::Which::kEnv).value(), z);

  tree.get("fusion.p_self.b").value = randn(rng, {cfg.d_model});
  const Tensor out = m::project(c, g.constant(Tensor({3, 2 * cfg.d_h})), m::Which::kSelf).value();
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t j = 0; j < cfg.d_model; ++j) EXPECT_EQ(out.at(r, j), tree.get("fusion.p_self.b").value[j]);

  const Tensor zs = randn(rng, {2, 2 * cfg.d_h});
  tree.get("fusion.p_self.w").value = randn(rng, {2 * cfg.d_h, cfg.d_model});
  const Tensor got = m::project(c, g.constant(zs), m::Which::kSelf).value();
  const Tensor& w = tree.get("fusion.p_self.w").value;
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t j = 0; j < cfg.d_model; ++j) {
      double s = tree.get("fusion.p_self.b").value[j];
      for (std::size_t k = 0; k < 2 * cfg.d_h; ++k) s += zs.at(r, k) * w.at(k, j);
      EXPECT_NEAR(got.at(r, j), s, 1e-12);
    }
}

// ---- fusion ----

TEST(CrossAttention, SingleTokenIdentityMapsReturnEnv) {
  auto cfg = fixtures::tiny_config();
  auto tree = m::init_params(cfg, m::Variant::kFull, 21);
  tree.get("fusion.cross.wv").value = identity(cfg.d_model);
  tree.get("fusion.cross.wo").value = identity(cfg.d_model);
  std::mt19937_64 rng(22);
  Graph g;
  m::Ctx c{g, tree};
  const Tensor fe = randn(rng, {2, cfg.d_model});
  auto a = m::cross_attention_fuse(c, cfg, g.constant(randn(rng, {2, cfg.d_model})), g.constant(fe));
  for (double w : a.weights.value().data()) EXPECT_EQ(w, 1.0);
  for (std::size_t i = 0; i < fe.numel(); ++i) EXPECT_NEAR(a.out.value()[i], fe[i], 1e-15);
}

TEST(CrossAttention, IdenticalValueRowsGiveThatRow) {
  auto cfg = fixtures::tiny_config();
  auto tree = m::init_params(cfg, m::Variant::kFull, 23);
  fixtures::randomize(tree, 24);
  tree.get("fusion.cross.wv").value = identity(cfg.d_model);
  tree.get("fusion.cross.wo").value = identity(cfg.d_model);
  std::mt19937_64 rng(25);
  const Tensor v = randn(rng, {cfg.d_model});
  Tensor tokens({1, 4, cfg.d_model});
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t j = 0; j < cfg.d_model; ++j) tokens[t * cfg.d_model + j] = v[j];
  Graph g;
  m::Ctx c{g, tree};
  auto a = m::cross_attention_fuse(c, cfg, g.constant(randn(rng, {1, cfg.d_model})), g.constant(tokens));
  for (std::size_t j = 0; j < cfg.d_model; ++j) EXPECT_NEAR(a.out.value()[j], v[j], 1e-12);
}

TEST(CrossAttention, TwoTokenCaseMatchesHandFormula) {
  auto cfg = fixtures::tiny_config();
  auto tree = m::init_params(cfg, m::Variant::kFull, 26);
  fixtures::randomize(tree, 27);
  std::mt19937_64 rng(28);
  const std::size_t d = cfg.d_model, h = cfg.fusion_heads, dk = d / h;
  const Tensor fs = randn(rng, {1, d}), fe = randn(rng, {1, 2, d});
  Graph g;
  m::Ctx c{g, tree};
  const Tensor got = m::cross_attention_fuse(c, cfg, g.constant(fs), g.constant(fe)).out.value();
  auto mat = [&](const char* n) { return tree.get(std::string("fusion.cross.") + n).value; };
  const Tensor wq = mat("wq"), wk = mat("wk"), wv = mat("wv"), wo = mat("wo");
  auto row_mul = [&](const double* x, const Tensor& w) {
    std::vector<double> y(d, 0.0);
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t k = 0; k < d; ++k) y[j] += x[k] * w.at(k, j);
    return y;
  };
  const auto q = row_mul(fs.data().data(), wq);
  const auto k0 = row_mul(fe.data().data(), wk), k1 = row_mul(fe.data().data() + d, wk);
  const auto v0 = row_mul(fe.data().data(), wv), v1 = row_mul(fe.data().data() + d, wv);
  std::vector<double> concat(d);
  for (std::size_t hh = 0; hh < h; ++hh) {
    double s0 = 0, s1 = 0;
    for (std::size_t j = 0; j < dk; ++j) {
      s0 += q[hh * dk + j] * k0[hh * dk + j];
      s1 += q[hh * dk + j] * k1[hh * dk + j];
    }
    s0 /= std::sqrt(double(dk));
    s1 /= std::sqrt(double(dk));
    const double a0 = 1.0 / (1.0 + std::exp(s1 - s0)), a1 = 1.0 - a0;
    for (std::size_t j = 0; j < dk; ++j) concat[hh * dk + j] = a0 * v0[hh * dk + j] + a1 * v1[hh * dk + j];
  }
  const auto want = row_mul(concat.data(), wo);
  for (std::size_t j = 0; j < d; ++j) EXPECT_NEAR(got[j], want[j], 1e-12);
}

TEST(CrossAttention, ZeroHeadsRejected) {
  auto cfg = fixtures::tiny_config();
  auto tree = m::init_params(cfg, m::Variant::kFull, 1);
  cfg.fusion_heads = 0;
  Graph g;
  m::Ctx c{g, tree};
  EXPECT_THROW(m::cross_attention_fuse(c, cfg, g.constant(Tensor({1, 8})), g.constant(Tensor({1, 8}))),
               std::invalid_argument);
}

TEST(GatedFusion, ZeroGateAverages) {
  auto cfg = fixtures::tiny_config();
  cfg.d_model = 2;
  cfg.fusion_heads = 1;
  cfg.trunk_heads = 1;
  auto tree = m::init_params(cfg, m::Variant::kFull, 29);
  tree.get("fusion.gate.w").value.fill(0.0);
  Graph g;
  m::Ctx c{g, tree};
  const Tensor out = m::gated_fuse(c, g.constant(Tensor({1, 2}, {2, 0})), g.constant(Tensor({1, 2}, {0, 2}))).value();
  EXPECT_EQ(out, Tensor({1, 2}, {1, 1}));
}

TEST(GatedFusion, SaturatedGateReturnsEnv) {
  auto cfg = fixtures::tiny_config();
  auto tree = m::init_params(cfg, m::Variant::kFull, 30);
  tree.get("fusion.gate.w").value.fill(0.0);
  tree.get("fusion.gate.b").value.fill(20.0);
  std::mt19937_64 rng(31);
  const Tensor fe = randn(rng, {3, 8}), fs = randn(rng, {3, 8});
  Graph g;
  m::Ctx c{g, tree};
  const Tensor out = m::gated_fuse(c, g.constant(fe), g.constant(fs)).value();
  for (std::size_t i = 0; i < fe.numel(); ++i) EXPECT_NEAR(out[i], fe[i], 1e-6);
}

TEST(GatedFusion, MatchesFormula) {
  auto cfg = fixtures::tiny_config();
  auto tree = m::init_params(cfg, m::Variant::kFull, 32);
  fixtures::randomize(tree, 33);
  std::mt19937_64 rng(34);
  const Tensor fe = randn(rng, {1, 8}), fs = randn(rng, {1, 8});
  Graph g;
  m::Ctx c{g, tree};
  const Tensor out = m::gated_fuse(c, g.constant(fe), g.constant(fs)).value();
  const Tensor& w = tree.get("fusion.gate.w").value;
  const Tensor& b = tree.get("fusion.gate.b").value;
  for (std::size_t j = 0; j < 8; ++j) {
    double z = b[j];
    for (std::size_t k = 0; k < 8; ++k) z += fe[k] * w.at(k, j) + fs[k] * w.at(8 + k, j);
    const double gg = 1.0 / (1.0 + std::exp(-z));
    EXPECT_NEAR(out[j], gg * fe[j] + (1 - gg) * fs[j], 1e-12);
  }
}

TEST(MoeFusion, EqualLogitsUniformRouting) {
  auto cfg = fixtures::tiny_config();
  auto tree = m::init_params(cfg, m::Variant::kFull, 35);
  tree.get("fusion.moe.router.w").value.fill(0.0);
  std::mt19937_64 rng(36);
  Graph g;
  m::Ctx c{g, tree};
  auto r = m::moe_fuse(c, cfg, g.constant(randn(rng, {2, 8})), g.constant(randn(rng, {2, 8})));
  for (double w : r.routing.value().data()) EXPECT_DOUBLE_EQ(w, 0.25);
}

TEST(MoeFusion, IdenticalExpertsGiveTheirOutput) {
  auto cfg = fixtures::tiny_config();
  auto tree = m::init_params(cfg, m::Variant::kFull, 37);
  fixtures::randomize(tree, 38);
  for (const char* s : {".w1", ".b1", ".w2", ".b2"})
    for (int e = 1; e < 4; ++e)
      tree.get("fusion.moe.e" + std::to_string(e) + s).value = tree.get(std::string("fusion.moe.e0") + s).value;
  std::mt19937_64 rng(39);
  Graph g;
  m::Ctx c{g, tree};
  Var fe = g.constant(randn(rng, {2, 8})), fs = g.constant(randn(rng, {2, 8}));
  auto r = m::moe_fuse(c, cfg, fe, fs);
  const Tensor v = m::mlp2(c, ad::concat({fe, fs}, 1), "fusion.moe.e0").value();
  for (std::size_t i = 0; i < v.numel(); ++i) EXPECT_NEAR(r.f_moe.value()[i], v[i], 1e-12);
}

TEST(MoeFusion, SaturatedRouterSelectsExpert) {
  auto cfg = fixtures::tiny_config();
  auto tree = m::init_params(cfg, m::Variant::kFull, 40);
  fixtures::randomize(tree, 41);
  tree.get("fusion.moe.router.w").value.fill(0.0);
  tree.get("fusion.moe.router.b").value = Tensor({4}, {0.0, 30.0, 0.0, 0.0});
  std::mt19937_64 rng(42);
  Graph g;
  m::Ctx c{g, tree};
  Var fe = g.constant(randn(rng, {2, 8})), fs = g.constant(randn(rng, {2, 8}));
  auto r = m::moe_fuse(c, cfg, fe, fs);
  const Tensor v = m::mlp2(c, ad::concat({fe, fs}, 1), "fusion.moe.e1").value();
  for (std::size_t i = 0; i < v.numel(); ++i) EXPECT_NEAR(r.f_moe.value()[i], v[i], 1e-6);
}

TEST(Tokens, ZeroEmbeddingsGiveTripleVerbatimAndShape) {
  auto cfg = fixtures::tiny_config();
  cfg.d_model = 64;
  auto tree = m::init_params(cfg, m::Variant::kFull, 43);
  tree.get("fusion.type_emb").value.fill(0.0);
  std::mt19937_64 rng(44);
  const Tensor a = randn(rng, {1, 64}), b = randn(rng, {1, 64}), x = randn(rng, {1, 64});
  Graph g;
  m::Ctx c{g, tree};
  const Tensor t = m::assemble_tokens(c, g.constant(a), g.constant(b), g.constant(x)).value();
  ASSERT_EQ(t.shape(), (ad::Shape{1, 3, 64}));
  for (std::size_t j = 0; j < 64; ++j) {
    EXPECT_EQ(t[j], a[j]);
    EXPECT_EQ(t[64 + j], b[j]);
    EXPECT_EQ(t[128 + j], x[j]);
  }
}

TEST(Tokens, PermutedEmbeddingsPermuteOnlyAdditiveParts) {
  auto cfg = fixtures::tiny_config();
  auto tree = m::init_params(cfg, m::Variant::kFull, 45);
  std::mt19937_64 rng(46);
  tree.get("fusion.type_emb").value = randn(rng, {3, 8});
  auto perm = tree;
  Tensor& pe = perm.get("fusion.type_emb").value;
  const Tensor& e = tree.get("fusion.type_emb").value;
  for (std::size_t j = 0; j < 8; ++j) {
    pe[j] = e[16 + j];
    pe[16 + j] = e[j];
  }
  const Tensor a = randn(rng, {1, 8}), b = randn(rng, {1, 8}), x = randn(rng, {1, 8});
  Graph g;
  m::Ctx c1{g, tree}, c2{g, perm};
  const Tensor t1 = m::assemble_tokens(c1, g.constant(a), g.constant(b), g.constant(x)).value();
  const Tensor t2 = m::assemble_tokens(c2, g.constant(a), g.constant(b), g.constant(x)).value();
  for (std::size_t j = 0; j < 8; ++j) {
    EXPECT_NEAR(t2[j] - a[j], t1[16 + j] - x[j], 1e-14);
    EXPECT_EQ(t2[8 + j], t1[8 + j]);
  }
}

// ---- full policy ----

TEST(Policy, OutputShapesAndValueBias) {
  auto cfg = fixtures::tiny_config();
  auto tree = m::init_params(cfg, m::Variant::kFull, 47);
  tree.get("heads.v.w").value.fill(0.0);
  tree.get("heads.v.b").value[0] = 0.75;
  std::mt19937_64 rng(48);
  Graph g;
  m::Ctx c{g, tree};
  auto f = m::forward(c, cfg, m::Variant::kFull, fixtures::random_batch(rng, cfg, 5));
  EXPECT_EQ(f.out.mean.shape(), (ad::Shape{5, cfg.action_dim}));
  EXPECT_EQ(f.out.log_std.shape(), (ad::Shape{cfg.action_dim}));
  EXPECT_EQ(f.out.value.shape(), (ad::Shape{5, 1}));
  for (double v : f.out.value.value().data()) EXPECT_EQ(v, 0.75);
}

TEST(Policy, FullPipelineGradCheckTinyDims) {
  auto cfg = fixtures::tiny_config();
  for (bool multi : {false, true}) {
    cfg.multi_token_env = multi;
    auto tree = m::init_params(cfg, m::Variant::kFull, 49);
    fixtures::randomize(tree, 50, 0.4);
    std::mt19937_64 rng(51);
    const auto batch = fixtures::random_batch(rng, cfg, 2);
    const Tensor wm = randn(rng, {2, cfg.action_dim});
    auto r = ad::grad_check_params(
        [&](Graph& g, ad::ParamTree& t) {
          m::Ctx c{g, t};
          auto f = m::forward(c, cfg, m::Variant::kFull, batch);
          return ad::add(ad::add(ad::sum(ad::mul(f.out.mean, g.constant(wm))), ad::sum(f.out.value)),
                         ad::sum(ad::square(f.out.log_std)));
        },
        tree);
    ASSERT_TRUE(r.ok) << r.message;
    EXPECT_LT(r.max_rel_error, 1e-4) << r.message;
  }
}

TEST(Policy, ActModes) {
  auto cfg = fixtures::tiny_config();
  auto tree = m::init_params(cfg, m::Variant::kFull, 52);
  std::mt19937_64 rng(53);
  const auto out = m::evaluate(tree, cfg, m::Variant::kFull, fixtures::random_batch(rng, cfg, 1));
  std::mt19937_64 r1(7), r2(7);
  EXPECT_EQ(m::sample_action(out.dist[0], m::ActMode::kMean, r1), m::sample_action(out.dist[0], m::ActMode::kMean, r2));
  EXPECT_EQ(m::sample_action(out.dist[0], m::ActMode::kSample, r1), m::sample_action(out.dist[0], m::ActMode::kSample, r2));

  m::ActionDist tight{out.dist[0].mean, std::vector<double>(cfg.action_dim, -5.0)};
  int inside = 0;
  for (int i = 0; i < 20000; ++i) {
    const auto a = m::sample_action(tight, m::ActMode::kSample, r1);
    bool ok = true;
    for (std::size_t j = 0; j < a.size(); ++j) ok = ok && std::abs(a[j] - tight.mean[j]) <= 4 * std::exp(-5.0);
    inside += ok;
  }
  EXPECT_GE(inside, 19990);
}

TEST(Policy, LogStdClampedToBounds) {
  auto cfg = fixtures::tiny_config();
  auto tree = m::init_params(cfg, m::Variant::kFull, 54);
  tree.get("heads.log_std").value = Tensor({3}, {-9.0, 0.0, 7.0});
  std::mt19937_64 rng(55);
  const auto out = m::evaluate(tree, cfg, m::Variant::kFull, fixtures::random_batch(rng, cfg, 1));
  EXPECT_EQ(out.dist[0].log_std, (std::vector<double>{-5.0, 0.0, 2.0}));
}

TEST(Policy, PermutationStableUnderSchemaRelabel) {
  auto cfg = fixtures::tiny_config();
  auto tree = m::init_params(cfg, m::Variant::kFull, 56);
  fixtures::randomize(tree, 57, 0.3);
  using detach::obs::Stream;
  auto s1 = detach::obs::SeparationSchema::from_labels(
      {Stream::kEnv, Stream::kSelf, Stream::kEnv, Stream::kSelf, Stream::kEnv, Stream::kSelf, Stream::kEnv, Stream::kSelf});
  // Move env index 0 to the back and relabel accordingly.
  std::vector<std::size_t> perm{1, 2, 3, 4, 5, 6, 7, 0};
  detach::obs::SeparationSchema s2;
  for (auto p : perm) s2.labels.push_back(s1.labels[p]);
  std::mt19937_64 rng(58);
  std::vector<double> raw1(2 * 3 * 8), raw2(raw1.size());
  for (auto& v : raw1) v = std::normal_distribution<double>()(rng);
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t i = 0; i < 8; ++i) raw2[r * 8 + i] = raw1[r * 8 + perm[i]];
  // Env order differs (index 0 moved last), so permute env columns back via
  // a matching cyclic shift: compare against a batch built with s1 instead.
  const auto b1 = m::batch_from_raw(raw1, 2, 3, s1);
  const auto b2 = m::batch_from_raw(raw2, 2, 3, s2);
  // Self stream is unchanged; env stream is cyclically shifted.
  EXPECT_EQ(b1.self, b2.self);
  // Swapping two ENV entries with each other while relabeling keeps streams
  // identical only when their relative order is preserved; check that case.
  std::vector<std::size_t> swap_env_self{1, 0, 3, 2, 5, 4, 7, 6};
  detach::obs::SeparationSchema s3;
  for (auto p : swap_env_self) s3.labels.push_back(s1.labels[p]);
  std::vector<double> raw3(raw1.size());
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t i = 0; i < 8; ++i) raw3[r * 8 + i] = raw1[r * 8 + swap_env_self[i]];
  const auto b3 = m::batch_from_raw(raw3, 2, 3, s3);
  const auto o1 = m::evaluate(tree, cfg, m::Variant::kFull, b1);
  const auto o3 = m::evaluate(tree, cfg, m::Variant::kFull, b3);
  for (std::size_t b = 0; b < 2; ++b) {
    EXPECT_EQ(o1.dist[b].mean, o3.dist[b].mean);
    EXPECT_EQ(o1.value[b], o3.value[b]);
  }
}

TEST(Policy, NonFiniteInputNamesStage) {
  auto cfg = fixtures::tiny_config();
  auto tree = m::init_params(cfg, m::Variant::kFull, 59);
  std::mt19937_64 rng(60);
  auto batch = fixtures::random_batch(rng, cfg, 1);
  batch.env[0] = std::numeric_limits<double>::infinity();
  try {
    m::evaluate(tree, cfg, m::Variant::kFull, batch);
    FAIL();
  } catch (const m::NonFiniteError& e) {
    EXPECT_EQ(e.stage(), "separate");
  }
}

TEST(Ablation, VariantsShrinkParameterCount) {
  auto cfg = fixtures::tiny_config();
  const auto full = m::init_params(cfg, m::Variant::kFull, 1);
  const auto a1 = m::init_params(cfg, m::Variant::kA1, 1);
  const auto a2 = m::init_params(cfg, m::Variant::kA2, 1);
  EXPECT_LT(a1.numel(), full.numel());
  EXPECT_LT(a2.numel(), full.numel());
  EXPECT_LT(a1.numel(ad::ParamGroup::kEnv), full.numel(ad::ParamGroup::kEnv));
  EXPECT_EQ(a1.numel(ad::ParamGroup::kSelf), full.numel(ad::ParamGroup::kSelf));
  EXPECT_EQ(m::init_params(cfg, m::Variant::kFull, 1).hash(), full.hash());
  std::mt19937_64 rng(61);
  auto batch = fixtures::random_batch(rng, cfg, 2);
  auto t1 = a1;
  auto t2 = a2;
  EXPECT_EQ(m::evaluate(t1, cfg, m::Variant::kA1, batch).dist.size(), 2u);
  EXPECT_EQ(m::evaluate(t2, cfg, m::Variant::kA2, batch).dist.size(), 2u);
}

TEST(Policy, DeskLatencyBudget) {
  m::ModelConfig cfg;  // d_model 64, T 10
  auto tree = m::init_params(cfg, m::Variant::kFull, 62);
  std::mt19937_64 rng(63);
  const auto batch = fixtures::random_batch(rng, cfg, 1);
  m::evaluate(tree, cfg, m::Variant::kFull, batch);
  const int n = 50;
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < n; ++i) m::evaluate(tree, cfg, m::Variant::kFull, batch);
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count() / n;
  RecordProperty("forward_ms", std::to_string(ms));
  std::printf("desk forward latency: %.3f ms\n", ms);
  EXPECT_LT(ms, 2.0);
}

}  // namespace
