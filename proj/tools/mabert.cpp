#include <string>
#include <vector>

#include "mabert/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return mabert::cli::run_cli(args);
}
