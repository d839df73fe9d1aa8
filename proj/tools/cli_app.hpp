#pragma once

#include <string>
#include <vector>

namespace dycon {

// Exit codes of the dycon executable.
enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitRuntime = 2, kExitIo = 3 };

// Runs one command line (without the program name). Output goes to stdout,
// diagnostics to stderr.
int run_cli(const std::vector<std::string>& args);

}  // namespace dycon
