#pragma once

#include <iosfwd>

namespace hjbac::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitError = 1,
  kExitUsage = 2,
  kExitNumeric = 3,
};

/// Entry point for the `hjbac` executable: train, density and compare.
int run(int argc, const char* const* argv);

}  // namespace hjbac::cli
