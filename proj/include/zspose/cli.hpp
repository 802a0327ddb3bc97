#pragma once

#include <ostream>

namespace zspose {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitEstimation = 3 };

/// Entry point of the zspose tool; payload goes to `out`, diagnostics to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace zspose
