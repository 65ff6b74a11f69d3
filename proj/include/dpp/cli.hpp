#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dpp {

// Exit codes of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitRuntime = 1, kExitConfig = 2, kExitInfeasible = 3 };

// Environment variable overriding the configured run directory (--out wins).
inline constexpr const char* kRunDirEnv = "DPP_RUN_DIR";

// Runs one dppnas invocation; args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dpp
