// SPDX-License-Identifier: Apache-2.0
#include <string>
#include <vector>

#include "trajedit/app/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return trajedit::app::run_cli(args);
}
