#include <iostream>

#include "xjunction/cli.hpp"

int main(int argc, char** argv) {
  return xjunction::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
