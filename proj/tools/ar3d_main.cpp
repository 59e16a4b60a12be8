#include <iostream>

#include "ar3d/cli.hpp"

int main(int argc, char** argv) {
  return ar3d::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
