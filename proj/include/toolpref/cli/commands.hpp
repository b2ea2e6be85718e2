#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace toolpref {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitThreshold = 3;

// Entry point of the command-line tool; args exclude the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace toolpref
