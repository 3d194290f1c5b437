#pragma once

#include <ostream>

namespace covertpath {

// Exit codes shared by every subcommand.
enum ExitCode : int { kExitOk = 0, kExitInput = 1, kExitInfeasible = 2, kExitDiverged = 3 };

/// Entry point of the `covertpath` tool: gen, oracle, train, eval, compare.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace covertpath
