#include "detach/model/policy.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace detach::model {

using ad::ParamGroup;
using ad::Shape;
namespace ops = detach::ad;

namespace {

class Init {
 public:
  Init(ParamTree& tree, std::uint64_t seed) : tree_(tree), rng_(seed) {}

  void uniform(const std::string& name, ParamGroup g, Shape shape, double fan_in, double fan_out) {
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> u(-a, a);
    Tensor t(std::move(shape));
    for (double& v : t.storage()) v = u(rng_);
    tree_.add(name, g, std::move(t));
  }

  void normal(const std::string& name, ParamGroup g, Shape shape, double sd) {
    std::normal_distribution<double> nd(0.0, sd);
    Tensor t(std::move(shape));
    for (double& v : t.storage()) v = nd(rng_);
    tree_.add(name, g, std::move(t));
  }

  void fill(const std::string& name, ParamGroup g, Shape shape, double v) { tree_.add(name, g, Tensor(std::move(shape), v)); }

  void linear(const std::string& prefix, ParamGroup g, std::size_t in, std::size_t out, bool bias = true,
              double gain = 1.0) {
    uniform(prefix + ".w", g, {in, out}, static_cast<double>(in), static_cast<double>(out));
    if (gain != 1.0) {
      for (double& v : tree_.get(prefix + ".w").value.storage()) v *= gain;
    }
    if (bias) fill(prefix + ".b", g, {out}, 0.0);
  }

  void mlp2(const std::string& prefix, ParamGroup g, std::size_t in, std::size_t hidden, std::size_t out) {
    uniform(prefix + ".w1", g, {in, hidden}, static_cast<double>(in), static_cast<double>(hidden));
    fill(prefix + ".b1", g, {hidden}, 0.0);
    uniform(prefix + ".w2", g, {hidden, out}, static_cast<double>(hidden), static_cast<double>(out));
    fill(prefix + ".b2", g, {out}, 0.0);
  }

  void attention(const std::string& prefix, ParamGroup g, std::size_t width, bool bias) {
    for (const char* m : {"q", "k", "v", "o"}) {
      uniform(prefix + ".w" + m, g, {width, width}, static_cast<double>(width), static_cast<double>(width));
      if (bias) fill(prefix + ".b" + m, g, {width}, 0.0);
    }
  }

  void norm(const std::string& prefix, ParamGroup g, std::size_t width) {
    fill(prefix + ".g", g, {width}, 1.0);
    fill(prefix + ".b", g, {width}, 0.0);
  }

  void lstm(const std::string& prefix, ParamGroup g, std::size_t in, std::size_t h) {
    uniform(prefix + ".wx", g, {in, 4 * h}, static_cast<double>(in), static_cast<double>(h));
    uniform(prefix + ".wh", g, {h, 4 * h}, static_cast<double>(h), static_cast<double>(h));
    Tensor b({4 * h}, 0.0);
    for (std::size_t i = h; i < 2 * h; ++i) b[i] = 1.0;  // forget gate
    tree_.add(prefix + ".b", g, std::move(b));
  }

 private:
  ParamTree& tree_;
  std::mt19937_64 rng_;
};

void check_finite(Var v, const char* stage) {
  if (!v.value().all_finite()) {
    throw NonFiniteError(stage, std::string("non-finite values after stage '") + stage + "'");
  }
}

// (B, d) -> (B, 1, d)
Var as_token(Var x) { return ops::reshape(x, {x.dim(0), 1, x.dim(1)}); }

// Last step of a (B, T, d) sequence as (B, d).
Var last_step(Var x) {
  const std::size_t b = x.dim(0), t = x.dim(1), d = x.dim(2);
  return ops::reshape(ops::slice(x, 1, t - 1, 1), {b, d});
}

Var lstm_pass(const Ctx& c, Var x, const std::string& prefix, std::size_t d_h, bool reverse) {
  const std::size_t B = x.dim(0), T = x.dim(1);
  Var xw = ops::matmul(x, c.p(prefix + ".wx"));  // (B, T, 4h)
  Var wh = c.p(prefix + ".wh");
  Var bias = c.p(prefix + ".b");
  Var h = c.c(Tensor({B, d_h}));
  Var cell = c.c(Tensor({B, d_h}));
  std::vector<Var> hs(T);
  for (std::size_t s = 0; s < T; ++s) {
    const std::size_t t = reverse ? T - 1 - s : s;
    Var gates = ops::add(ops::add(ops::reshape(ops::slice(xw, 1, t, 1), {B, 4 * d_h}), ops::matmul(h, wh)), bias);
    Var i = ops::sigmoid(ops::slice(gates, 1, 0, d_h));
    Var f = ops::sigmoid(ops::slice(gates, 1, d_h, d_h));
    Var gg = ops::tanh(ops::slice(gates, 1, 2 * d_h, d_h));
    Var o = ops::sigmoid(ops::slice(gates, 1, 3 * d_h, d_h));
    cell = ops::add(ops::mul(f, cell), ops::mul(i, gg));
    h = ops::mul(o, ops::tanh(cell));
    if (!h.value().all_finite()) {
      throw NonFiniteError("self_encode", prefix + ": non-finite recurrence at step " + std::to_string(t));
    }
    hs[t] = as_token(h);
  }
  return ops::concat(hs, 1);
}

}  // namespace

ParamTree init_params(const ModelConfig& cfg, Variant variant, std::uint64_t seed) {
  cfg.validate();
  ParamTree tree;
  Init in(tree, seed);
  const std::size_t de = cfg.d_e(), dz = 2 * cfg.d_h, dm = cfg.d_model;

  if (variant == Variant::kA1) {
    in.linear("env.lin", ParamGroup::kEnv, cfg.d_env, de);
  } else {
    for (std::size_t k : cfg.env_kernels) {
      const std::string p = "env.conv" + std::to_string(k);
      in.uniform(p + ".w", ParamGroup::kEnv, {k, cfg.d_env, cfg.env_branch_channels},
                 static_cast<double>(k * cfg.d_env), static_cast<double>(k * cfg.env_branch_channels));
      in.fill(p + ".b", ParamGroup::kEnv, {cfg.env_branch_channels}, 0.0);
    }
    in.attention("env.attn", ParamGroup::kEnv, de, true);
    in.norm("env.ln", ParamGroup::kEnv, de);
  }

  if (variant == Variant::kA2) {
    in.linear("self.lin", ParamGroup::kSelf, cfg.d_self, dz);
  } else {
    in.lstm("self.fwd", ParamGroup::kSelf, cfg.d_self, cfg.d_h);
    in.lstm("self.bwd", ParamGroup::kSelf, cfg.d_self, cfg.d_h);
    in.linear("self.gate", ParamGroup::kSelf, dz, dz);
  }

  in.linear("fusion.p_env", ParamGroup::kFusion, de, dm);
  in.linear("fusion.p_self", ParamGroup::kFusion, dz, dm);
  in.attention("fusion.cross", ParamGroup::kFusion, dm, false);
  in.linear("fusion.gate", ParamGroup::kFusion, 2 * dm, dm);
  in.linear("fusion.moe.router", ParamGroup::kFusion, 2 * dm, cfg.experts);
  for (std::size_t e = 0; e < cfg.experts; ++e) {
    in.mlp2("fusion.moe.e" + std::to_string(e), ParamGroup::kFusion, 2 * dm, 2 * dm, dm);
  }
  in.normal("fusion.type_emb", ParamGroup::kFusion, {3, dm}, 0.02);

  for (std::size_t l = 0; l < cfg.trunk_layers; ++l) {
    const std::string p = "trunk." + std::to_string(l);
    in.norm(p + ".ln1", ParamGroup::kTrunk, dm);
    in.attention(p + ".attn", ParamGroup::kTrunk, dm, true);
    in.norm(p + ".ln2", ParamGroup::kTrunk, dm);
    in.mlp2(p + ".ffn", ParamGroup::kTrunk, dm, cfg.ffn_mult * dm, dm);
  }
  in.norm("trunk.ln_f", ParamGroup::kTrunk, dm);

  in.linear("heads.mu", ParamGroup::kHeads, dm, cfg.action_dim, true, 0.01);
  in.fill("heads.log_std", ParamGroup::kHeads, {cfg.action_dim}, cfg.log_std_init);
  in.linear("heads.v", ParamGroup::kHeads, dm, 1, true, 0.1);

  in.mlp2("aux.dec_env", ParamGroup::kAux, de, de, cfg.d_env);
  in.mlp2("aux.dec_self", ParamGroup::kAux, dz, dz, cfg.d_self);
  in.mlp2("aux.f_pred", ParamGroup::kAux, dz, dz, dz);
  return tree;
}

Var linear(const Ctx& c, Var x, const std::string& prefix, bool bias) {
  Var y = ops::matmul(x, c.p(prefix + ".w"));
  return bias ? ops::add(y, c.p(prefix + ".b")) : y;
}

Var layer_norm_affine(const Ctx& c, Var x, const std::string& prefix, double eps) {
  return ops::add(ops::mul(ops::layer_norm(x, eps), c.p(prefix + ".g")), c.p(prefix + ".b"));
}

Var mlp2(const Ctx& c, Var x, const std::string& prefix) {
  Var h = ops::relu(ops::add(ops::matmul(x, c.p(prefix + ".w1")), c.p(prefix + ".b1")));
  return ops::add(ops::matmul(h, c.p(prefix + ".w2")), c.p(prefix + ".b2"));
}

AttentionOut multi_head_attention(const Ctx& c, Var q_in, Var kv_in, const std::string& prefix,
                                  std::size_t heads, bool bias) {
  if (heads == 0) throw std::invalid_argument(prefix + ": attention needs at least one head");
  const std::size_t width = q_in.shape().back();
  if (width % heads != 0) {
    throw std::invalid_argument(prefix + ": width " + std::to_string(width) + " not divisible by " +
                                std::to_string(heads) + " heads");
  }
  auto proj = [&](Var x, const char* m) {
    Var y = ops::matmul(x, c.p(prefix + ".w" + m));
    return bias ? ops::add(y, c.p(prefix + ".b" + m)) : y;
  };
  Var q = ops::split_heads(proj(q_in, "q"), heads);
  Var k = ops::split_heads(proj(kv_in, "k"), heads);
  Var v = ops::split_heads(proj(kv_in, "v"), heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(width / heads));
  Var w = ops::softmax(ops::scale(ops::matmul(q, ops::transpose(k)), scale), 2);
  Var ctx = ops::merge_heads(ops::matmul(w, v), heads);
  return {proj(ctx, "o"), w};
}

EnvEncoding env_encode(const Ctx& c, const ModelConfig& cfg, Variant v, Var obs_env) {
  if (obs_env.rank() != 3 || obs_env.dim(2) != cfg.d_env) {
    throw ad::ShapeError("env_encode: expected (B, T, " + std::to_string(cfg.d_env) + "), got " +
                         ad::shape_to_string(obs_env.shape()));
  }
  EnvEncoding e;
  if (v == Variant::kA1) {
    e.s_env = linear(c, obs_env, "env.lin");
    e.z_env = e.s_env;
    return e;
  }
  std::vector<Var> branches;
  for (std::size_t k : cfg.env_kernels) {
    const std::string p = "env.conv" + std::to_string(k);
    branches.push_back(ops::add(ops::conv1d(obs_env, c.p(p + ".w")), c.p(p + ".b")));
  }
  e.s_env = branches.size() == 1 ? branches[0] : ops::concat(branches, 2);
  AttentionOut a = multi_head_attention(c, e.s_env, e.s_env, "env.attn", cfg.env_heads, true);
  e.attn_weights = a.weights;
  e.z_env = layer_norm_affine(c, ops::add(a.out, e.s_env), "env.ln", cfg.ln_eps);
  return e;
}

SelfEncoding self_encode(const Ctx& c, const ModelConfig& cfg, Variant v, Var obs_self) {
  if (obs_self.rank() != 3 || obs_self.dim(2) != cfg.d_self) {
    throw ad::ShapeError("self_encode: expected (B, T, " + std::to_string(cfg.d_self) + "), got " +
                         ad::shape_to_string(obs_self.shape()));
  }
  SelfEncoding s;
  if (v == Variant::kA2) {
    s.h_bi = linear(c, obs_self, "self.lin");
    s.z_self = s.h_bi;
    return s;
  }
  Var fwd = lstm_pass(c, obs_self, "self.fwd", cfg.d_h, false);
  Var bwd = lstm_pass(c, obs_self, "self.bwd", cfg.d_h, true);
  s.h_bi = ops::concat({fwd, bwd}, 2);
  s.z_self = ops::mul(s.h_bi, ops::sigmoid(linear(c, s.h_bi, "self.gate")));
  return s;
}

Var project(const Ctx& c, Var z, Which which) {
  const std::string p = which == Which::kEnv ? "fusion.p_env" : "fusion.p_self";
  return linear(c, z, p);
}

AttentionOut cross_attention_fuse(const Ctx& c, const ModelConfig& cfg, Var f_self, Var f_env_tokens) {
  const std::size_t B = f_self.dim(0);
  Var kv = f_env_tokens.rank() == 2 ? as_token(f_env_tokens) : f_env_tokens;
  AttentionOut a = multi_head_attention(c, as_token(f_self), kv, "fusion.cross", cfg.fusion_heads, false);
  a.out = ops::reshape(a.out, {B, cfg.d_model});
  return a;
}

Var gated_fuse(const Ctx& c, Var f_env, Var f_self) {
  Var g = ops::sigmoid(linear(c, ops::concat({f_env, f_self}, 1), "fusion.gate"));
  return ops::add(ops::mul(g, f_env), ops::mul(ops::add_scalar(ops::scale(g, -1.0), 1.0), f_self));
}

MoeOut moe_fuse(const Ctx& c, const ModelConfig& cfg, Var f_env, Var f_self) {
  const std::size_t B = f_env.dim(0);
  Var x = ops::concat({f_env, f_self}, 1);
  MoeOut m;
  m.routing = ops::softmax(linear(c, x, "fusion.moe.router"), 1);
  std::vector<Var> outs;
  for (std::size_t e = 0; e < cfg.experts; ++e) outs.push_back(as_token(mlp2(c, x, "fusion.moe.e" + std::to_string(e))));
  Var stacked = ops::concat(outs, 1);  // (B, E, d)
  Var w = ops::reshape(m.routing, {B, 1, cfg.experts});
  m.f_moe = ops::reshape(ops::matmul(w, stacked), {B, cfg.d_model});
  return m;
}

Var assemble_tokens(const Ctx& c, Var f_moe, Var f_gate, Var f_cross) {
  Var t = ops::concat({as_token(f_moe), as_token(f_gate), as_token(f_cross)}, 1);
  return ops::add(t, c.p("fusion.type_emb"));
}

Var trunk(const Ctx& c, const ModelConfig& cfg, Var tokens) {
  Var x = tokens;
  for (std::size_t l = 0; l < cfg.trunk_layers; ++l) {
    const std::string p = "trunk." + std::to_string(l);
    Var h = layer_norm_affine(c, x, p + ".ln1", cfg.ln_eps);
    x = ops::add(x, multi_head_attention(c, h, h, p + ".attn", cfg.trunk_heads, true).out);
    x = ops::add(x, mlp2(c, layer_norm_affine(c, x, p + ".ln2", cfg.ln_eps), p + ".ffn"));
  }
  return layer_norm_affine(c, x, "trunk.ln_f", cfg.ln_eps);
}

HeadsOut heads(const Ctx& c, const ModelConfig& cfg, Var pooled) {
  HeadsOut h;
  h.mean = linear(c, pooled, "heads.mu");
  h.log_std = ops::clamp(c.p("heads.log_std"), cfg.log_std_min, cfg.log_std_max);
  h.value = linear(c, pooled, "heads.v");
  return h;
}

Forward forward(const Ctx& c, const ModelConfig& cfg, Variant v, const Batch& batch) {
  if (batch.env.rank() != 3 || batch.self.rank() != 3 || batch.env.dim(0) != batch.self.dim(0) ||
      batch.env.dim(1) != batch.self.dim(1)) {
    throw ad::shape_error("forward", batch.env.shape(), batch.self.shape());
  }
  const std::size_t B = batch.env.dim(0);
  Forward f;
  Var env_in = c.c(batch.env);
  Var self_in = c.c(batch.self);
  check_finite(env_in, "separate");
  check_finite(self_in, "separate");
  f.env = env_encode(c, cfg, v, env_in);
  check_finite(f.env.z_env, "env_encode");
  f.self = self_encode(c, cfg, v, self_in);
  check_finite(f.self.z_self, "self_encode");
  f.f_env_seq = project(c, f.env.z_env, Which::kEnv);
  f.f_env = last_step(f.f_env_seq);
  f.f_self = last_step(project(c, f.self.z_self, Which::kSelf));
  check_finite(f.f_env_seq, "project");
  check_finite(f.f_self, "project");

  AttentionOut cross = cross_attention_fuse(c, cfg, f.f_self, cfg.multi_token_env ? f.f_env_seq : f.f_env);
  f.f_cross = cross.out;
  f.cross_weights = cross.weights;
  f.f_gate = gated_fuse(c, f.f_env, f.f_self);
  MoeOut moe = moe_fuse(c, cfg, f.f_env, f.f_self);
  f.f_moe = moe.f_moe;
  f.routing = moe.routing;
  Var cross_tok = f.f_cross;
  if (!batch.cross_keep.empty()) {
    if (batch.cross_keep.size() != B) throw std::invalid_argument("forward: cross_keep length != batch size");
    Tensor keep({B, cfg.d_model});
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t j = 0; j < cfg.d_model; ++j) keep.at(b, j) = batch.cross_keep[b];
    cross_tok = ops::mul(cross_tok, c.c(std::move(keep)));
  }
  check_finite(f.f_cross, "fusion");
  check_finite(f.f_gate, "fusion");
  check_finite(f.f_moe, "fusion");

  f.tokens = assemble_tokens(c, f.f_moe, f.f_gate, cross_tok);
  Var t = trunk(c, cfg, f.tokens);
  check_finite(t, "trunk");
  f.pooled = ops::mean(t, 1);
  f.out = heads(c, cfg, f.pooled);
  check_finite(f.out.mean, "heads");
  check_finite(f.out.value, "heads");
  return f;
}

std::vector<double> sample_action(const ActionDist& d, ActMode mode, std::mt19937_64& rng) {
  std::vector<double> a = d.mean;
  if (mode == ActMode::kMean) return a;
  std::normal_distribution<double> nd;
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += std::exp(d.log_std[i]) * nd(rng);
  return a;
}

double gaussian_log_prob(const ActionDist& d, const std::vector<double>& action) {
  double lp = 0.0;
  for (std::size_t i = 0; i < action.size(); ++i) {
    const double z = (action[i] - d.mean[i]) * std::exp(-d.log_std[i]);
    lp += -0.5 * z * z - d.log_std[i] - 0.5 * std::log(2.0 * std::numbers::pi);
  }
  return lp;
}

PolicyOutput evaluate(ParamTree& tree, const ModelConfig& cfg, Variant v, const Batch& batch) {
  Graph g(false);
  Ctx c{g, tree};
  Forward f = forward(c, cfg, v, batch);
  const std::size_t B = batch.env.dim(0), A = cfg.action_dim;
  PolicyOutput out;
  out.dist.resize(B);
  out.value.resize(B);
  const Tensor& mean = f.out.mean.value();
  const Tensor& ls = f.out.log_std.value();
  for (std::size_t b = 0; b < B; ++b) {
    out.dist[b].mean.assign(mean.data().begin() + b * A, mean.data().begin() + (b + 1) * A);
    out.dist[b].log_std.assign(ls.data().begin(), ls.data().end());
    out.value[b] = f.out.value.value()[b];
  }
  return out;
}

Batch batch_from_raw(const std::vector<double>& raw, std::size_t batch, std::size_t window,
                     const obs::SeparationSchema& schema) {
  const std::size_t w = schema.width();
  if (raw.size() != batch * window * w) {
    throw std::invalid_argument("batch_from_raw: expected " + std::to_string(batch * window * w) + " values, got " +
                                std::to_string(raw.size()));
  }
  Batch b;
  b.env = Tensor({batch, window, schema.d_env()});
  b.self = Tensor({batch, window, schema.d_self()});
  for (std::size_t r = 0; r < batch * window; ++r) {
    const auto s = obs::separate(std::span<const double>(raw.data() + r * w, w), schema);
    std::copy(s.env.begin(), s.env.end(), b.env.data().begin() + r * s.env.size());
    std::copy(s.self.begin(), s.self.end(), b.self.data().begin() + r * s.self.size());
  }
  return b;
}

}  // namespace detach::model
