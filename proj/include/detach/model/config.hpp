#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace detach::model {

enum class Variant { kFull, kA1, kA2 };

std::string_view variant_name(Variant v);
Variant variant_from_name(std::string_view name);

struct ModelConfig {
  std::size_t d_env = 20;
  std::size_t d_self = 20;
  std::size_t action_dim = 12;
  std::size_t window = 10;  // T

  std::vector<std::size_t> env_kernels{3, 5, 7};
  std::size_t env_branch_channels = 16;  // d_e = kernels * channels
  std::size_t env_heads = 4;

  std::size_t d_h = 64;
  std::size_t d_model = 64;

  std::size_t fusion_heads = 8;
  std::size_t experts = 4;
  bool multi_token_env = false;  // cross-attention keys/values over the whole window

  std::size_t trunk_layers = 4;
  std::size_t trunk_heads = 8;
  std::size_t ffn_mult = 4;

  double log_std_init = -0.5;
  double log_std_min = -5.0;
  double log_std_max = 2.0;
  double ln_eps = 1e-5;

  std::size_t d_e() const { return env_kernels.size() * env_branch_channels; }

  // Throws std::invalid_argument naming the offending field.
  void validate() const;
};

}  // namespace detach::model
