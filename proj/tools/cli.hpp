#pragma once

#include <string>
#include <vector>

namespace spikegraph::cli {

/// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumerical = 4;

/// Runs one command line (args[0] is the program name) and returns the exit code.
int run(const std::vector<std::string>& args);

}  // namespace spikegraph::cli
