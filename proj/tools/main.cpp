#include <iostream>
#include <string>
#include <vector>

#include "repolab/cli/dispatch.hpp"

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv, argv + argc);
  return repolab::cli::dispatch(args, std::cout, std::cerr);
}
