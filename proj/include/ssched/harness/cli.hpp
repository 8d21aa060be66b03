#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ssched::harness {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitConfig = 2,
  kExitNumeric = 3,
  kExitBoundViolation = 4,
};

/// Entry point of the `ssched` command line. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ssched::harness
