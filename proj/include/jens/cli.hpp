#pragma once

#include <ostream>

namespace jens {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitData = 2,
  kExitDivergence = 3,
  kExitVerification = 4,
};

// Entry point of the jens executable; argv[0] is the program name.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace jens
