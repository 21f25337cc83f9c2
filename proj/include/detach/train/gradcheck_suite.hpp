#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace detach::train {

struct GradCheckEntry {
  std::string module;  // encoders, fusion, trunk_heads, losses
  std::string name;
  double max_rel_error = 0.0;
  bool finite = true;
  double seconds = 0.0;
  std::string message;
};

// Central-difference checks of every learned module and every loss at tiny
// dimensions, parameters and inputs both.
std::vector<GradCheckEntry> run_gradcheck_suite(std::uint64_t seed = 1);

inline bool gradcheck_passed(const GradCheckEntry& e, double tol = 1e-4) { return e.finite && e.max_rel_error < tol; }

}  // namespace detach::train
