#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace fbridge::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfigError = 2,
  kWriteError = 3,
  kDiverged = 4,
  kCheckpointMismatch = 5,
};

/// Runs the command line `args` (args[0] is the program name). Results go to
/// `out`, diagnostics and progress to `err`. Returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fbridge::cli
