#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace minibert {

// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitParse = 3;
inline constexpr int kExitRuntime = 4;

// Runs one command line (args[0] is the program name). Verbs: pretrain,
// finetune, ablate, report.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace minibert
