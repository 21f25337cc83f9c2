#include "detach/model/config.hpp"

#include <stdexcept>
#include <string>

namespace detach::model {
namespace {

void require(bool ok, const char* field, const std::string& why) {
  if (!ok) throw std::invalid_argument(std::string("model.") + field + ": " + why);
}

}  // namespace

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::kFull: return "full";
    case Variant::kA1: return "a1";
    case Variant::kA2: return "a2";
  }
  return "full";
}

Variant variant_from_name(std::string_view name) {
  if (name == "full" || name == "FULL") return Variant::kFull;
  if (name == "a1" || name == "A1") return Variant::kA1;
  if (name == "a2" || name == "A2") return Variant::kA2;
  throw std::invalid_argument("unknown model variant '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  require(d_env > 0, "d_env", "must be positive");
  require(d_self > 0, "d_self", "must be positive");
  require(action_dim > 0, "action_dim", "must be positive");
  require(window > 0, "window", "must be positive");
  require(!env_kernels.empty(), "env_kernels", "needs at least one kernel");
  for (std::size_t k : env_kernels) require(k % 2 == 1, "env_kernels", "kernel sizes must be odd");
  require(env_branch_channels > 0, "env_branch_channels", "must be positive");
  require(env_heads > 0 && d_e() % env_heads == 0, "env_heads", "must divide d_e = " + std::to_string(d_e()));
  require(d_h > 0, "d_h", "must be positive");
  require(d_model > 0, "d_model", "must be positive");
  require(fusion_heads > 0 && d_model % fusion_heads == 0, "fusion_heads", "must divide d_model");
  require(experts > 0, "experts", "must be positive");
  require(trunk_heads > 0 && d_model % trunk_heads == 0, "trunk_heads", "must divide d_model");
  require(ffn_mult > 0, "ffn_mult", "must be positive");
  require(log_std_min < log_std_max, "log_std_min", "must be below log_std_max");
  require(ln_eps > 0.0, "ln_eps", "must be positive");
}

}  // namespace detach::model
