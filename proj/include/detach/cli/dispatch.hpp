#pragma once

#include <iosfwd>

namespace detach::cli {

// Exit codes: 0 success, 1 runtime failure (or a failed check), 2 usage
// error, 3 configuration error. Failures also print one JSON error line to `err`.
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitConfig = 3;

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace detach::cli
