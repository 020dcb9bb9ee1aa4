#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace anchorlab::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 2;
inline constexpr int kExitGate = 3;
inline constexpr int kExitUsage = 64;

// Entry point behind the `anchorlab` binary. args[0] is the program name.
// Errors are reported on `err` and mapped onto the exit codes above.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace anchorlab::cli
