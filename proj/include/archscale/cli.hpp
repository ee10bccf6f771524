#pragma once

#include <iosfwd>

#include "archscale/error.hpp"

namespace archscale {

inline constexpr const char* kToolVersion = "0.1.0";

/// Exit statuses of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitInternal = 1,
  kExitConfig = 2,
  kExitMissingFile = 3,
  kExitAllDiverged = 4,
  kExitIdMismatch = 5,
};

int exit_code_for(ErrorCode code) noexcept;

/// Entry point of the `archscale` tool; argv[0] is the program name.
/// Regular output goes to out, diagnostics to err.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace archscale
