#include <string>
#include <vector>

#include "advcast/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return advcast::run_command(args);
}
