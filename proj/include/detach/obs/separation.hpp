#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace detach::obs {

enum class Stream : std::uint8_t { kEnv, kSelf };

std::string_view stream_name(Stream s);

// Per-index routing of a raw observation into the two streams.
//
// Hard mode routes index i to labels[i]. In soft mode each row of
// soft_assignment holds (w_env, w_self) summing to one; stream membership
// still follows labels and the routed value is scaled by the weight of its
// stream, so one-hot rows reproduce hard mode exactly.
struct SeparationSchema {
  std::vector<Stream> labels;
  std::vector<std::string> names;  // optional, same length as labels when present
  std::optional<std::vector<std::array<double, 2>>> soft_assignment;

  std::size_t width() const { return labels.size(); }
  std::size_t d_env() const;
  std::size_t d_self() const;

  // Throws std::invalid_argument on inconsistent sizes or non-stochastic rows.
  void validate() const;

  static SeparationSchema from_labels(std::vector<Stream> labels);

  friend bool operator==(const SeparationSchema&, const SeparationSchema&) = default;
};

struct SeparatedObservation {
  std::vector<double> env;
  std::vector<double> self;
  bool degenerate = false;  // one stream is empty
};

SeparatedObservation separate(std::span<const double> raw, const SeparationSchema& schema);

// Inverse of hard-mode separate: scatters both streams back to raw order.
std::vector<double> reconstruct(const SeparatedObservation& obs, const SeparationSchema& schema);

// Semantic description of one raw index in a new observation layout.
struct IndexMeta {
  std::string name;
  std::optional<Stream> tag;
};

// Builds the schema for a new layout. Soft weights are carried over by name
// from `old` where a name matches; other indices become hard.
SeparationSchema adapt_schema(const SeparationSchema& old, const std::vector<IndexMeta>& layout);

// Text schema: one range per line, "<first>-<last> ENV|SELF [name]" or
// "<index> ENV|SELF [name]"; '#' starts a comment. Ranges must tile 0..n-1.
SeparationSchema parse_schema(std::string_view text);
SeparationSchema load_schema(const std::filesystem::path& path);
std::string format_schema(const SeparationSchema& schema);

}  // namespace detach::obs
