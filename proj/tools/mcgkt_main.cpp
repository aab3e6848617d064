#include <iostream>
#include <string>
#include <vector>

#include "mcgkt/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return mcgkt::run_cli(args, std::cout, std::cerr);
}
