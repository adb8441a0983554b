#include <iostream>
#include <string>
#include <vector>

#include "prid/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return prid::run_cli(args, std::cout, std::cerr);
}
