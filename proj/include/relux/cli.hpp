#pragma once

#include <ostream>

namespace relux {

/// Exit statuses of the command-line entry point.
inline constexpr int kExitOk = 0;
inline constexpr int kExitDomainError = 1;
inline constexpr int kExitUsage = 2;

/// Parses argv, runs one subcommand and returns its exit status. Summaries
/// go to `out`; usage text and structured error lines go to `err`.
/// `serve-oracle` blocks until SIGINT/SIGTERM or its --duration elapses.
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace relux
