#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "detach/ad/graph.hpp"
#include "detach/ad/ops.hpp"
#include "detach/ad/param_tree.hpp"
#include "detach/model/config.hpp"
#include "detach/obs/separation.hpp"

namespace detach::model {

using ad::Graph;
using ad::ParamTree;
using ad::Tensor;
using ad::Var;

// Binds a graph to a parameter tree for one forward pass.
struct Ctx {
  Graph& g;
  ParamTree& tree;
  Var p(std::string_view name) const { return g.param(tree, name); }
  Var c(Tensor t) const { return g.constant(std::move(t)); }
};

// Raised when a stage boundary produces NaN/inf; what() names the stage.
class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(std::string stage, const std::string& msg) : std::runtime_error(msg), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

// Creates every parameter of the given variant, including the auxiliary
// decoders and predictor used by pretraining and the regularizers.
ParamTree init_params(const ModelConfig& cfg, Variant variant, std::uint64_t seed);

// ---- building blocks (batched; leading axis is the batch) ----

Var linear(const Ctx& c, Var x, const std::string& prefix, bool bias = true);
Var layer_norm_affine(const Ctx& c, Var x, const std::string& prefix, double eps);
// relu(x W1 + b1) W2 + b2 with parameters <prefix>.w1/b1/w2/b2.
Var mlp2(const Ctx& c, Var x, const std::string& prefix);

struct AttentionOut {
  Var out;      // (B, Tq, width)
  Var weights;  // (B*heads, Tq, Tk), rows sum to one
};

// Multi-head attention with projections <prefix>.wq/wk/wv/wo (+ .bq/... when
// bias is set).
AttentionOut multi_head_attention(const Ctx& c, Var q_in, Var kv_in, const std::string& prefix,
                                  std::size_t heads, bool bias);

struct EnvEncoding {
  Var s_env;         // (B, T, d_e)
  Var z_env;         // (B, T, d_e)
  Var attn_weights;  // (B*h_env, T, T); invalid for the A1 variant
};
EnvEncoding env_encode(const Ctx& c, const ModelConfig& cfg, Variant v, Var obs_env);

struct SelfEncoding {
  Var h_bi;    // (B, T, 2 d_h)
  Var z_self;  // (B, T, 2 d_h)
};
SelfEncoding self_encode(const Ctx& c, const ModelConfig& cfg, Variant v, Var obs_self);

enum class Which { kEnv, kSelf };
Var project(const Ctx& c, Var z, Which which);

AttentionOut cross_attention_fuse(const Ctx& c, const ModelConfig& cfg, Var f_self, Var f_env_tokens);
Var gated_fuse(const Ctx& c, Var f_env, Var f_self);

struct MoeOut {
  Var f_moe;    // (B, d_model)
  Var routing;  // (B, experts)
};
MoeOut moe_fuse(const Ctx& c, const ModelConfig& cfg, Var f_env, Var f_self);

// Stacks [f_moe, f_gate, f_cross] into (B, 3, d_model) plus type embeddings.
Var assemble_tokens(const Ctx& c, Var f_moe, Var f_gate, Var f_cross);

Var trunk(const Ctx& c, const ModelConfig& cfg, Var tokens);

struct HeadsOut {
  Var mean;     // (B, action_dim)
  Var log_std;  // (action_dim), clamped
  Var value;    // (B, 1)
};
HeadsOut heads(const Ctx& c, const ModelConfig& cfg, Var pooled);

// ---- full pipeline ----

struct Batch {
  Tensor env;   // (B, T, d_env)
  Tensor self;  // (B, T, d_self)
  // Per-sample keep flags for the f_cross token (1 keeps, 0 drops); empty
  // means keep all.
  std::vector<double> cross_keep;
};

struct Forward {
  EnvEncoding env;
  SelfEncoding self;
  Var f_env_seq, f_env, f_self;
  Var f_cross, f_gate, f_moe, routing, cross_weights;
  Var tokens, pooled;
  HeadsOut out;
};

Forward forward(const Ctx& c, const ModelConfig& cfg, Variant v, const Batch& batch);

// ---- acting ----

struct ActionDist {
  std::vector<double> mean;
  std::vector<double> log_std;
};

enum class ActMode { kSample, kMean };

std::vector<double> sample_action(const ActionDist& d, ActMode mode, std::mt19937_64& rng);
double gaussian_log_prob(const ActionDist& d, const std::vector<double>& action);

// Output-only pass for a batch (no tape); used by rollouts.
struct PolicyOutput {
  std::vector<ActionDist> dist;
  std::vector<double> value;
};
PolicyOutput evaluate(ParamTree& tree, const ModelConfig& cfg, Variant v, const Batch& batch);

// Splits flattened raw observation windows (B*T rows of schema width) into
// the two stream tensors.
Batch batch_from_raw(const std::vector<double>& raw, std::size_t batch, std::size_t window,
                     const obs::SeparationSchema& schema);

}  // namespace detach::model
