#include <iostream>

#include "stencilseer/cli.hpp"

int main(int argc, char** argv) {
  return stencilseer::run_command(argc, argv, std::cout, std::cerr);
}
