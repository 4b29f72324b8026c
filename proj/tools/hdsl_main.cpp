#include <string>
#include <vector>

#include "hdsl/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return hdsl::cli::run(std::move(args));
}
