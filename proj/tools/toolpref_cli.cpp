#include <iostream>
#include <string>
#include <vector>

#include "toolpref/cli/commands.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return toolpref::run_cli(args, std::cout, std::cerr);
}
