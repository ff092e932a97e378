#include <iostream>

#include "fox/cli.hpp"

int main(int argc, char** argv) {
  std::ios::sync_with_stdio(true);
  return fox::run_command(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
