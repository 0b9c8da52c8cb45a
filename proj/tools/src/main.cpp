// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "centerlens/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return centerlens::cli::dispatch(args, std::cout, std::cerr);
}
