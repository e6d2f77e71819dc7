#include <iostream>
#include <string>
#include <vector>

#include "minibert/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return minibert::run_cli(args, std::cout, std::cerr);
}
