#include <string>
#include <vector>

#include "nbv/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return nbv::run_cli(args);
}
