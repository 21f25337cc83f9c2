#include "detach/ad/param_tree.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace detach::ad {
namespace {

constexpr char kMagic[8] = {'D', 'T', 'C', 'H', 'P', 'R', 'M', '1'};

template <typename T>
void write_le(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw std::runtime_error("ParamTree::load: truncated file");
  }
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  T v;
  std::memcpy(&v, bytes, sizeof(T));
  return v;
}

void fnv_mix(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
}

void hash_param(std::uint64_t& h, const Parameter& p) {
  fnv_mix(h, p.name.data(), p.name.size());
  for (std::size_t d : p.value.shape()) {
    const std::uint64_t d64 = d;
    fnv_mix(h, &d64, sizeof(d64));
  }
  fnv_mix(h, p.value.data().data(), p.value.numel() * sizeof(double));
}

}  // namespace

std::string_view group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::kEnv: return "env";
    case ParamGroup::kSelf: return "self";
    case ParamGroup::kFusion: return "fusion";
    case ParamGroup::kTrunk: return "trunk";
    case ParamGroup::kHeads: return "heads";
    case ParamGroup::kAux: return "aux";
  }
  return "aux";
}

ParamGroup group_from_name(std::string_view name) {
  for (auto g : {ParamGroup::kEnv, ParamGroup::kSelf, ParamGroup::kFusion,
                 ParamGroup::kTrunk, ParamGroup::kHeads, ParamGroup::kAux}) {
    if (group_name(g) == name) return g;
  }
  throw std::invalid_argument("unknown parameter group '" + std::string(name) + "'");
}

ParamTree::ParamTree(const ParamTree& other) : index_(other.index_), frozen_mask_(other.frozen_mask_) {
  params_.reserve(other.params_.size());
  for (const auto& p : other.params_) params_.push_back(std::make_unique<Parameter>(*p));
}

ParamTree& ParamTree::operator=(const ParamTree& other) {
  if (this != &other) {
    ParamTree copy(other);
    *this = std::move(copy);
  }
  return *this;
}

Parameter& ParamTree::add(std::string name, ParamGroup group, Tensor init) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->group = group;
  p->grad = Tensor::zeros_like(init);
  p->value = std::move(init);
  index_.emplace(std::move(name), params_.size());
  params_.push_back(std::move(p));
  return *params_.back();
}

bool ParamTree::contains(std::string_view name) const { return index_.find(name) != index_.end(); }

Parameter& ParamTree::get(std::string_view name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter '" + std::string(name) + "'");
  return *params_[it->second];
}

const Parameter& ParamTree::get(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter '" + std::string(name) + "'");
  return *params_[it->second];
}

std::size_t ParamTree::numel() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.numel();
  return n;
}

std::size_t ParamTree::numel(ParamGroup g) const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    if (p->group == g) n += p->value.numel();
  }
  return n;
}

std::vector<Parameter*> ParamTree::all() {
  std::vector<Parameter*> out;
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParamTree::all() const {
  std::vector<const Parameter*> out;
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<Parameter*> ParamTree::group(ParamGroup g) {
  std::vector<Parameter*> out;
  for (auto& p : params_) {
    if (p->group == g) out.push_back(p.get());
  }
  return out;
}

std::vector<const Parameter*> ParamTree::group(ParamGroup g) const {
  std::vector<const Parameter*> out;
  for (const auto& p : params_) {
    if (p->group == g) out.push_back(p.get());
  }
  return out;
}

void ParamTree::set_frozen(ParamGroup g, bool frozen) {
  const auto bit = static_cast<std::uint8_t>(1u << static_cast<unsigned>(g));
  frozen_mask_ = frozen ? (frozen_mask_ | bit) : (frozen_mask_ & ~bit);
}

bool ParamTree::frozen(ParamGroup g) const {
  return (frozen_mask_ >> static_cast<unsigned>(g)) & 1u;
}

void ParamTree::zero_grad() {
  for (auto& p : params_) p->grad.fill(0.0);
}

double ParamTree::grad_norm(ParamGroup g) const {
  double s = 0.0;
  for (const auto& p : params_) {
    if (p->group != g) continue;
    for (double v : p->grad.data()) s += v * v;
  }
  return std::sqrt(s);
}

std::uint64_t ParamTree::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& p : params_) hash_param(h, *p);
  return h;
}

std::uint64_t ParamTree::hash(ParamGroup g) const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& p : params_) {
    if (p->group == g) hash_param(h, *p);
  }
  return h;
}

std::filesystem::path ParamTree::manifest_path(const std::filesystem::path& binary_path) {
  auto p = binary_path;
  p += ".manifest";
  return p;
}

std::string ParamTree::manifest() const {
  std::ostringstream os;
  os << "# detach parameter manifest v1\n";
  os << "# name group shape numel offset\n";
  std::size_t offset = 0;
  for (const auto& p : params_) {
    os << p->name << ' ' << group_name(p->group) << ' ';
    for (std::size_t i = 0; i < p->value.rank(); ++i) os << (i ? "x" : "") << p->value.dim(i);
    if (p->value.rank() == 0) os << "scalar";
    os << ' ' << p->value.numel() << ' ' << offset << '\n';
    offset += p->value.numel();
  }
  return os.str();
}

void ParamTree::save(const std::filesystem::path& binary_path) const {
  if (binary_path.has_parent_path()) std::filesystem::create_directories(binary_path.parent_path());
  std::ofstream os(binary_path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + binary_path.string());
  os.write(kMagic, sizeof(kMagic));
  write_le<std::uint64_t>(os, params_.size());
  for (const auto& p : params_) {
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(p->name.size()));
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    write_le<std::uint8_t>(os, static_cast<std::uint8_t>(p->group));
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(p->value.rank()));
    for (std::size_t d : p->value.shape()) write_le<std::uint64_t>(os, d);
    for (double v : p->value.data()) write_le<double>(os, v);
  }
  write_le<std::uint8_t>(os, frozen_mask_);
  std::ofstream ms(manifest_path(binary_path), std::ios::trunc);
  ms << manifest();
}

ParamTree ParamTree::load(const std::filesystem::path& binary_path) {
  std::ifstream is(binary_path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + binary_path.string());
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("ParamTree::load: bad magic in " + binary_path.string());
  }
  ParamTree tree;
  const auto count = read_le<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = read_le<std::uint32_t>(is);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw std::runtime_error("ParamTree::load: truncated name");
    const auto group = read_le<std::uint8_t>(is);
    if (group > static_cast<std::uint8_t>(ParamGroup::kAux)) {
      throw std::runtime_error("ParamTree::load: bad group id for " + name);
    }
    const auto rank = read_le<std::uint32_t>(is);
    Shape shape(rank);
    for (auto& d : shape) d = read_le<std::uint64_t>(is);
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = read_le<double>(is);
    tree.add(std::move(name), static_cast<ParamGroup>(group), Tensor(std::move(shape), std::move(data)));
  }
  tree.frozen_mask_ = read_le<std::uint8_t>(is);
  return tree;
}

}  // namespace detach::ad
