#include <string>
#include <vector>

#include "asl/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return asl::cli::run(args);
}
