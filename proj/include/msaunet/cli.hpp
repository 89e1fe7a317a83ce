#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace msaunet {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // unexpected internal failure
inline constexpr int kExitUsage = 2;    // bad arguments, config, data or checkpoint
inline constexpr int kExitNumerical = 3;

// args[0] is the program name. Subcommands: train, eval, predict, metrics.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace msaunet
