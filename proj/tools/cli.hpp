#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace stagerl::cli {

/// Exit codes are a stable contract.
enum ExitCode : int { kOk = 0, kInputError = 1, kUnsatisfiable = 2, kDivergence = 3 };

/// Environment variable naming the default output directory.
inline constexpr const char* kOutEnv = "STAGERL_OUT";

/// Runs one command line (args[0] is the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace stagerl::cli
