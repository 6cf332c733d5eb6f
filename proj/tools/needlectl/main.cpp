#include <unistd.h>

#include <iostream>

#include "needle/cli/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  needle::cli::CliEnv env;
  env.interactive = ::isatty(0) && ::isatty(1);
  return needle::cli::runCli(args, std::cout, std::cerr, env);
}
