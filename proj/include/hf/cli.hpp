#pragma once

#include <string>
#include <vector>

namespace hf::cli {

// Runs one command (train, eval, predict, score, export-attention).
// Exit codes: 0 success, 1 usage/config error, 2 runtime failure.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);  // args exclude the program name

}  // namespace hf::cli
