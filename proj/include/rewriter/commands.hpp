#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace rewriter {

/// Process exit codes.
enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitIo = 2, kExitBackend = 3 };

/// Entry point of the `rewriter` binary. `args` excludes the program name.
/// Failures are reported on `err` as one JSON line.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace rewriter
