#include <iostream>

#include "pixcon/tools/cli.hpp"

int main(int argc, char** argv) {
  return pixcon::tools::run_cli(argc, argv, std::cout, std::cerr);
}
