#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace smcpose {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntimeError = 1;
inline constexpr int kExitUsageError = 2;

// Entry point of the `smcpose` tool. `args` excludes the program name.
// Bad flags, unreadable or invalid configs and bad overrides exit with
// kExitUsageError; failures while running a command with kExitRuntimeError.
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace smcpose
