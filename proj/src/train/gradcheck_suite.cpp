#include "detach/train/gradcheck_suite.hpp"

#include <chrono>
#include <functional>
#include <random>

#include "detach/ad/grad_check.hpp"
#include "detach/train/losses.hpp"
#include "detach/train/ppo.hpp"

namespace detach::train {
namespace {

using ad::Graph;
using ad::ParamTree;
using ad::Tensor;
using ad::Var;
using model::Ctx;
using model::ModelConfig;
using model::Variant;

ModelConfig tiny() {
  ModelConfig c;
  c.d_env = 4;
  c.d_self = 4;
  c.action_dim = 3;
  c.window = 3;
  c.env_kernels = {3, 5};
  c.env_branch_channels = 2;
  c.env_heads = 2;
  c.d_h = 3;
  c.d_model = 8;
  c.fusion_heads = 2;
  c.experts = 3;
  c.trunk_layers = 2;
  c.trunk_heads = 2;
  c.ffn_mult = 2;
  return c;
}

Tensor randn(std::mt19937_64& rng, ad::Shape s, double sd = 1.0) {
  std::normal_distribution<double> nd(0.0, sd);
  Tensor t(std::move(s));
  for (double& v : t.storage()) v = nd(rng);
  return t;
}

// Random values everywhere so zero biases and unit gains cannot mask errors.
ParamTree params(const ModelConfig& cfg, Variant v, std::uint64_t seed) {
  ParamTree t = model::init_params(cfg, v, seed);
  std::mt19937_64 rng(seed ^ 0x5bd1e995ULL);
  std::normal_distribution<double> nd(0.0, 0.4);
  for (auto* p : t.all())
    for (double& x : p->value.storage()) x = nd(rng);
  return t;
}

// Only the parameters whose names start with one of the prefixes.
ParamTree subset(const ParamTree& full, std::initializer_list<std::string_view> prefixes) {
  ParamTree out;
  for (const auto* p : full.all()) {
    for (auto pre : prefixes) {
      if (p->name.rfind(pre, 0) == 0) {
        out.add(p->name, p->group, p->value);
        break;
      }
    }
  }
  return out;
}

// Linear probe sum(v * w) with fixed random weights per call site.
struct Probe {
  std::mt19937_64 rng;
  std::vector<Tensor> ws;
  std::size_t next = 0;
  Var operator()(Graph& g, Var v) {
    if (next == ws.size()) ws.push_back(randn(rng, v.shape()));
    return ad::sum(ad::mul(v, g.constant(ws[next++])));
  }
  void rewind() { next = 0; }
};

class Suite {
 public:
  explicit Suite(std::uint64_t seed) : seed_(seed), rng_(seed) {}

  void params_case(const std::string& module, const std::string& name, ParamTree tree,
                   const std::function<Var(Graph&, ParamTree&, Probe&)>& f) {
    Probe probe{std::mt19937_64(rng_())};
    run(module, name + "/params", [&] {
      return ad::grad_check_params(
          [&](Graph& g, ParamTree& t) {
            probe.rewind();
            return f(g, t, probe);
          },
          tree);
    });
  }

  void input_case(const std::string& module, const std::string& name, ParamTree tree, const Tensor& x,
                  const std::function<Var(Graph&, ParamTree&, Var, Probe&)>& f) {
    Probe probe{std::mt19937_64(rng_())};
    run(module, name + "/input", [&] {
      return ad::grad_check(
          [&](Graph& g, Var v) {
            probe.rewind();
            return f(g, tree, v, probe);
          },
          x);
    });
  }

  std::mt19937_64& rng() { return rng_; }
  std::uint64_t seed() const { return seed_; }
  std::vector<GradCheckEntry> take() { return std::move(out_); }

 private:
  void run(const std::string& module, const std::string& name, const std::function<ad::GradCheckResult()>& f) {
    const auto t0 = std::chrono::steady_clock::now();
    GradCheckEntry e;
    e.module = module;
    e.name = name;
    try {
      const auto r = f();
      e.max_rel_error = r.max_rel_error;
      e.finite = r.ok;
      e.message = r.message;
    } catch (const std::exception& ex) {
      e.finite = false;
      e.message = ex.what();
    }
    e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out_.push_back(std::move(e));
  }

  std::uint64_t seed_;
  std::mt19937_64 rng_;
  std::vector<GradCheckEntry> out_;
};

void encoders(Suite& s, const ModelConfig& cfg) {
  const std::size_t B = 2;
  const Tensor env = randn(s.rng(), {B, cfg.window, cfg.d_env});
  const Tensor self = randn(s.rng(), {B, cfg.window, cfg.d_self});
  for (Variant v : {Variant::kFull, Variant::kA1}) {
    const std::string name = v == Variant::kFull ? "env" : "env_linear";
    const ParamTree t = subset(params(cfg, v, s.seed() + 1), {"env."});
    auto f = [&, v](Graph& g, ParamTree& tree, Var x, Probe& p) {
      Ctx c{g, tree};
      const auto e = model::env_encode(c, cfg, v, x);
      Var out = ad::add(p(g, e.s_env), p(g, e.z_env));
      if (v == Variant::kFull) out = ad::add(out, p(g, e.attn_weights));
      return out;
    };
    s.params_case("encoders", name, t, [&](Graph& g, ParamTree& tree, Probe& p) { return f(g, tree, g.constant(env), p); });
    s.input_case("encoders", name, t, env, f);
  }
  for (Variant v : {Variant::kFull, Variant::kA2}) {
    const std::string name = v == Variant::kFull ? "self" : "self_linear";
    const ParamTree t = subset(params(cfg, v, s.seed() + 2), {"self."});
    auto f = [&, v](Graph& g, ParamTree& tree, Var x, Probe& p) {
      Ctx c{g, tree};
      const auto e = model::self_encode(c, cfg, v, x);
      return ad::add(p(g, e.h_bi), p(g, e.z_self));
    };
    s.params_case("encoders", name, t, [&](Graph& g, ParamTree& tree, Probe& p) { return f(g, tree, g.constant(self), p); });
    s.input_case("encoders", name, t, self, f);
  }
}

void fusion(Suite& s, const ModelConfig& cfg) {
  const std::size_t B = 3, dm = cfg.d_model;
  const ParamTree full = params(cfg, Variant::kFull, s.seed() + 3);
  const Tensor fe = randn(s.rng(), {B, dm}), fs = randn(s.rng(), {B, dm});
  const Tensor seq = randn(s.rng(), {B, cfg.window, dm});

  // Cross-attention, single env token and the whole window as keys.
  for (bool multi : {false, true}) {
    const std::string name = multi ? "cross_attention_window" : "cross_attention";
    const ParamTree t = subset(full, {"fusion.cross"});
    const Tensor kv = multi ? seq : fe;
    auto run = [&](Graph& g, ParamTree& tree, Var q, Var k, Probe& p) {
      Ctx c{g, tree};
      const auto a = model::cross_attention_fuse(c, cfg, q, k);
      return ad::add(p(g, a.out), p(g, a.weights));
    };
    s.params_case("fusion", name, t, [&](Graph& g, ParamTree& tree, Probe& p) {
      return run(g, tree, g.constant(fs), g.constant(kv), p);
    });
    s.input_case("fusion", name + "_query", t, fs,
                 [&](Graph& g, ParamTree& tree, Var x, Probe& p) { return run(g, tree, x, g.constant(kv), p); });
    s.input_case("fusion", name + "_keys", t, kv,
                 [&](Graph& g, ParamTree& tree, Var x, Probe& p) { return run(g, tree, g.constant(fs), x, p); });
  }

  auto pair_case = [&](const std::string& name, std::initializer_list<std::string_view> prefixes,
                       const std::function<Var(Graph&, const Ctx&, Var, Var, Probe&)>& body) {
    const ParamTree t = subset(full, prefixes);
    s.params_case("fusion", name, t, [&](Graph& g, ParamTree& tree, Probe& p) {
      Ctx c{g, tree};
      return body(g, c, g.constant(fe), g.constant(fs), p);
    });
    s.input_case("fusion", name + "_env", t, fe, [&](Graph& g, ParamTree& tree, Var x, Probe& p) {
      Ctx c{g, tree};
      return body(g, c, x, g.constant(fs), p);
    });
    s.input_case("fusion", name + "_self", t, fs, [&](Graph& g, ParamTree& tree, Var x, Probe& p) {
      Ctx c{g, tree};
      return body(g, c, g.constant(fe), x, p);
    });
  };
  pair_case("gated", {"fusion.gate"},
            [&](Graph& g, const Ctx& c, Var a, Var b, Probe& p) { return p(g, model::gated_fuse(c, a, b)); });
  pair_case("moe", {"fusion.moe"}, [&](Graph& g, const Ctx& c, Var a, Var b, Probe& p) {
    const auto m = model::moe_fuse(c, cfg, a, b);
    return ad::add(p(g, m.f_moe), p(g, m.routing));
  });

  // Stream projections and token assembly.
  const Tensor ze = randn(s.rng(), {B, cfg.window, cfg.d_e()}), zs = randn(s.rng(), {B, cfg.window, 2 * cfg.d_h});
  s.params_case("fusion", "projection_tokens", subset(full, {"fusion.p_env", "fusion.p_self", "fusion.type_emb"}),
                [&](Graph& g, ParamTree& tree, Probe& p) {
                  Ctx c{g, tree};
                  const Var a = model::project(c, g.constant(ze), model::Which::kEnv);
                  const Var b = model::project(c, g.constant(zs), model::Which::kSelf);
                  return p(g, model::assemble_tokens(c, ad::mean(a, 1), ad::mean(b, 1), ad::sum(a, 1)));
                });
}

void trunk_heads(Suite& s, const ModelConfig& cfg) {
  const std::size_t B = 2;
  const ParamTree t = subset(params(cfg, Variant::kFull, s.seed() + 4), {"trunk.", "heads."});
  const Tensor tokens = randn(s.rng(), {B, 3, cfg.d_model});
  auto f = [&](Graph& g, ParamTree& tree, Var x, Probe& p) {
    Ctx c{g, tree};
    const auto h = model::heads(c, cfg, ad::mean(model::trunk(c, cfg, x), 1));
    return ad::add(ad::add(p(g, h.mean), p(g, h.value)), p(g, h.log_std));
  };
  s.params_case("trunk_heads", "trunk_heads", t,
                [&](Graph& g, ParamTree& tree, Probe& p) { return f(g, tree, g.constant(tokens), p); });
  s.input_case("trunk_heads", "trunk_heads", t, tokens, f);
}

void losses(Suite& s, const ModelConfig& cfg) {
  auto& rng = s.rng();
  const Tensor target = randn(rng, {2, 3, 4});
  ParamTree none;
  s.input_case("losses", "reconstruction", none, randn(rng, {2, 3, 4}),
               [&](Graph& g, ParamTree&, Var x, Probe&) { return reconstruction_loss(x, g.constant(target)); });
  const Tensor wp = randn(rng, {4, 4}, 0.5);
  s.input_case("losses", "temporal_prediction", none, randn(rng, {2, 3, 4}), [&](Graph& g, ParamTree&, Var x, Probe&) {
    return temporal_prediction_loss(x, [&](Var z) { return ad::tanh(ad::matmul(z, g.constant(wp))); });
  });
  s.input_case("losses", "temporal_penalty", none, randn(rng, {2, 3, 4}),
               [](Graph&, ParamTree&, Var x, Probe&) { return temporal_penalty(x); });
  const Tensor other = randn(rng, {10, 3});
  s.input_case("losses", "decouple", none, randn(rng, {10, 2}),
               [&](Graph& g, ParamTree&, Var x, Probe&) { return decouple_penalty(x, g.constant(other)); });

  const std::size_t B = 8;
  model::Batch batch;
  batch.env = randn(rng, {B, cfg.window, cfg.d_env});
  batch.self = randn(rng, {B, cfg.window, cfg.d_self});
  const ParamTree full = params(cfg, Variant::kFull, s.seed() + 5);

  s.params_case("losses", "pretrain_env", subset(full, {"env.", "aux.dec_env", "aux.f_pred"}),
                [&](Graph& g, ParamTree& t, Probe&) {
                  Ctx c{g, t};
                  return loss_env_pretrain(c, cfg, Variant::kFull, c.c(batch.env));
                });
  s.params_case("losses", "pretrain_self", subset(full, {"self.", "aux.dec_self", "aux.f_pred"}), [&](Graph& g, ParamTree& t, Probe&) {
    Ctx c{g, t};
    return loss_self_pretrain(c, cfg, Variant::kFull, c.c(batch.self));
  });

  // Losses over the full forward pass, differentiated w.r.t. the unfrozen groups.
  auto forward_case = [&](const std::string& name, std::initializer_list<ad::ParamGroup> frozen,
                          const std::function<Var(Graph&, const Ctx&, const model::Forward&)>& body) {
    ParamTree t = full;
    for (auto grp : frozen) t.set_frozen(grp, true);
    s.params_case("losses", name, std::move(t), [&](Graph& g, ParamTree& tree, Probe&) {
      Ctx c{g, tree};
      return body(g, c, model::forward(c, cfg, Variant::kFull, batch));
    });
  };
  const Tensor actions = randn(rng, {B, cfg.action_dim}, 0.5), old_lp = randn(rng, {B}, 0.5);
  Tensor adv = randn(rng, {B}), ret = randn(rng, {B});
  PpoConfig pc;
  pc.clip = 0.2;
  pc.entropy_coef = 0.01;
  forward_case("ppo", {ad::ParamGroup::kEnv, ad::ParamGroup::kSelf, ad::ParamGroup::kFusion, ad::ParamGroup::kAux},
               [&](Graph& g, const Ctx&, const model::Forward& f) {
                 return ppo_loss(f, g.constant(actions), old_lp, adv, ret, pc).total;
               });
  LossWeights w;
  w.quality = 0.5;
  // The target is a stop-gradient input; a fixed one keeps the numeric side consistent.
  const Tensor z_target = randn(rng, {B, cfg.d_model});
  const TargetProvider tgt = [&](const Tensor&) { return z_target; };
  forward_case("fusion_stage", {ad::ParamGroup::kEnv, ad::ParamGroup::kSelf, ad::ParamGroup::kTrunk, ad::ParamGroup::kAux},
               [&](Graph&, const Ctx& c, const model::Forward& f) {
                 return loss_fusion_stage(c, ad::sum(f.out.value), f, w, tgt);
               });
  forward_case("joint", {ad::ParamGroup::kFusion, ad::ParamGroup::kTrunk, ad::ParamGroup::kHeads},
               [&](Graph&, const Ctx& c, const model::Forward& f) {
                 const auto r = specialization_regularizers(c, f, batch, LossWeights{});
                 return loss_joint(ad::sum(f.out.value), r, {0.0, 1.0, 1.0, 1.0, 1.0, 1.0});
               });
}

}  // namespace

std::vector<GradCheckEntry> run_gradcheck_suite(std::uint64_t seed) {
  const ModelConfig cfg = tiny();
  Suite s(seed);
  encoders(s, cfg);
  fusion(s, cfg);
  trunk_heads(s, cfg);
  losses(s, cfg);
  return s.take();
}

}  // namespace detach::train
