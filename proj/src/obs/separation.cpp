#include "detach/obs/separation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace detach::obs {

std::string_view stream_name(Stream s) { return s == Stream::kEnv ? "ENV" : "SELF"; }

std::size_t SeparationSchema::d_env() const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), Stream::kEnv));
}

std::size_t SeparationSchema::d_self() const { return labels.size() - d_env(); }

void SeparationSchema::validate() const {
  if (!names.empty() && names.size() != labels.size()) {
    throw std::invalid_argument("schema: " + std::to_string(names.size()) + " names for " +
                                std::to_string(labels.size()) + " labels");
  }
  if (!soft_assignment) return;
  if (soft_assignment->size() != labels.size()) {
    throw std::invalid_argument("schema: soft_assignment has " + std::to_string(soft_assignment->size()) +
                                " rows, expected " + std::to_string(labels.size()));
  }
  for (std::size_t i = 0; i < soft_assignment->size(); ++i) {
    const auto& row = (*soft_assignment)[i];
    if (row[0] < 0.0 || row[1] < 0.0 || std::abs(row[0] + row[1] - 1.0) > 1e-9) {
      throw std::invalid_argument("schema: soft_assignment row " + std::to_string(i) + " is not stochastic");
    }
  }
}

SeparationSchema SeparationSchema::from_labels(std::vector<Stream> labels) {
  SeparationSchema s;
  s.labels = std::move(labels);
  return s;
}

SeparatedObservation separate(std::span<const double> raw, const SeparationSchema& schema) {
  if (raw.size() != schema.width()) {
    throw std::invalid_argument("separate: raw width " + std::to_string(raw.size()) + " != schema width " +
                                std::to_string(schema.width()));
  }
  SeparatedObservation out;
  out.env.reserve(schema.d_env());
  out.self.reserve(schema.d_self());
  const auto* soft = schema.soft_assignment ? &*schema.soft_assignment : nullptr;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const bool env = schema.labels[i] == Stream::kEnv;
    const double w = soft ? (*soft)[i][env ? 0 : 1] : 1.0;
    (env ? out.env : out.self).push_back(soft ? w * raw[i] : raw[i]);
  }
  out.degenerate = out.env.empty() || out.self.empty();
  return out;
}

std::vector<double> reconstruct(const SeparatedObservation& obs, const SeparationSchema& schema) {
  if (obs.env.size() != schema.d_env() || obs.self.size() != schema.d_self()) {
    throw std::invalid_argument("reconstruct: stream widths do not match schema");
  }
  std::vector<double> raw(schema.width());
  std::size_t e = 0, s = 0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    raw[i] = schema.labels[i] == Stream::kEnv ? obs.env[e++] : obs.self[s++];
  }
  return raw;
}

SeparationSchema adapt_schema(const SeparationSchema& old, const std::vector<IndexMeta>& layout) {
  SeparationSchema out;
  out.labels.reserve(layout.size());
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (!layout[i].tag) {
      throw std::invalid_argument("adapt_schema: index " + std::to_string(i) + " ('" + layout[i].name +
                                  "') has no ENV/SELF tag");
    }
    out.labels.push_back(*layout[i].tag);
  }
  const bool named = std::any_of(layout.begin(), layout.end(), [](const IndexMeta& m) { return !m.name.empty(); });
  if (named) {
    for (const auto& m : layout) out.names.push_back(m.name);
  }
  if (old.soft_assignment && !old.names.empty() && named) {
    std::map<std::string, std::pair<Stream, std::array<double, 2>>, std::less<>> by_name;
    for (std::size_t i = 0; i < old.names.size(); ++i) by_name[old.names[i]] = {old.labels[i], (*old.soft_assignment)[i]};
    std::vector<std::array<double, 2>> soft;
    for (std::size_t i = 0; i < layout.size(); ++i) {
      auto it = by_name.find(layout[i].name);
      if (it != by_name.end() && it->second.first == out.labels[i]) {
        soft.push_back(it->second.second);
      } else {
        soft.push_back(out.labels[i] == Stream::kEnv ? std::array<double, 2>{1.0, 0.0}
                                                     : std::array<double, 2>{0.0, 1.0});
      }
    }
    out.soft_assignment = std::move(soft);
  }
  out.validate();
  return out;
}

SeparationSchema parse_schema(std::string_view text) {
  struct Range {
    std::size_t first, last;
    Stream tag;
    std::string name;
  };
  std::vector<Range> ranges;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string span, tag, name;
    if (!(ls >> span)) continue;
    if (!(ls >> tag)) throw std::invalid_argument("schema line " + std::to_string(lineno) + ": missing tag");
    ls >> name;
    Range r{};
    try {
      const auto dash = span.find('-');
      r.first = std::stoul(span.substr(0, dash));
      r.last = dash == std::string::npos ? r.first : std::stoul(span.substr(dash + 1));
    } catch (const std::exception&) {
      throw std::invalid_argument("schema line " + std::to_string(lineno) + ": bad range '" + span + "'");
    }
    if (tag == "ENV") {
      r.tag = Stream::kEnv;
    } else if (tag == "SELF") {
      r.tag = Stream::kSelf;
    } else {
      throw std::invalid_argument("schema line " + std::to_string(lineno) + ": unknown tag '" + tag + "'");
    }
    if (r.last < r.first) throw std::invalid_argument("schema line " + std::to_string(lineno) + ": empty range");
    r.name = name;
    ranges.push_back(std::move(r));
  }
  std::sort(ranges.begin(), ranges.end(), [](const Range& a, const Range& b) { return a.first < b.first; });
  SeparationSchema s;
  bool named = false;
  for (const auto& r : ranges) named = named || !r.name.empty();
  std::size_t next = 0;
  for (const auto& r : ranges) {
    if (r.first != next) {
      throw std::invalid_argument("schema: index " + std::to_string(next) + " is untagged or tagged twice");
    }
    for (std::size_t i = r.first; i <= r.last; ++i) {
      s.labels.push_back(r.tag);
      if (named) s.names.push_back(r.first == r.last ? r.name : r.name + "[" + std::to_string(i - r.first) + "]");
    }
    next = r.last + 1;
  }
  return s;
}

SeparationSchema load_schema(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read schema " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_schema(buf.str());
}

std::string format_schema(const SeparationSchema& schema) {
  std::ostringstream os;
  std::size_t i = 0;
  while (i < schema.width()) {
    std::size_t j = i;
    while (j + 1 < schema.width() && schema.labels[j + 1] == schema.labels[i]) ++j;
    os << i << '-' << j << ' ' << stream_name(schema.labels[i]) << '\n';
    i = j + 1;
  }
  return os.str();
}

}  // namespace detach::obs
