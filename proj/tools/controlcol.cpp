#include <string>
#include <vector>

#include "controlcol/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return controlcol::run_cli(args);
}
