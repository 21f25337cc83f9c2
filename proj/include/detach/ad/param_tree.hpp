#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "detach/ad/tensor.hpp"

namespace detach::ad {

// Coarse parameter groups used for stage-wise freezing.
enum class ParamGroup : std::uint8_t {
  kEnv = 0,     // environmental encoder
  kSelf = 1,    // self encoder
  kFusion = 2,  // projections, fusion paths, token embeddings
  kTrunk = 3,   // transformer trunk
  kHeads = 4,   // policy / value heads
  kAux = 5,     // pretraining decoders and the temporal predictor
};

std::string_view group_name(ParamGroup g);
ParamGroup group_from_name(std::string_view name);

struct Parameter {
  std::string name;
  ParamGroup group = ParamGroup::kAux;
  Tensor value;
  Tensor grad;
};

// Named learnable parameters in insertion order, with per-group freeze flags.
class ParamTree {
 public:
  ParamTree() = default;
  ParamTree(const ParamTree& other);
  ParamTree& operator=(const ParamTree& other);
  ParamTree(ParamTree&&) noexcept = default;
  ParamTree& operator=(ParamTree&&) noexcept = default;

  Parameter& add(std::string name, ParamGroup group, Tensor init);

  bool contains(std::string_view name) const;
  Parameter& get(std::string_view name);
  const Parameter& get(std::string_view name) const;

  std::size_t size() const { return params_.size(); }
  std::size_t numel() const;
  std::size_t numel(ParamGroup g) const;

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::vector<Parameter*> group(ParamGroup g);
  std::vector<const Parameter*> group(ParamGroup g) const;

  void set_frozen(ParamGroup g, bool frozen);
  bool frozen(ParamGroup g) const;
  bool frozen(const Parameter& p) const { return frozen(p.group); }

  void zero_grad();
  double grad_norm(ParamGroup g) const;

  // FNV-1a over names, shapes and raw payload bytes.
  std::uint64_t hash() const;
  std::uint64_t hash(ParamGroup g) const;

  // Binary container + sidecar text manifest. Round trip is bit-exact.
  void save(const std::filesystem::path& binary_path) const;
  static ParamTree load(const std::filesystem::path& binary_path);
  std::string manifest() const;

  static std::filesystem::path manifest_path(const std::filesystem::path& binary_path);

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, std::size_t, std::less<>> index_;
  std::uint8_t frozen_mask_ = 0;
};

}  // namespace detach::ad
