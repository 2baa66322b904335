#pragma once

// proxlab command line. Exit codes:
//   0  success
//   1  a check failed (gradcheck above tolerance)
//   2  usage or configuration error
//   3  runtime abort

#include <iosfwd>

namespace proxlab {

inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitRuntime = 3;

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace proxlab
