// SPDX-License-Identifier: Apache-2.0
// Standalone stdio oracle: fake_oracle_server [--mode M] [--ops a,b] ...
#include <unistd.h>

#include <csignal>
#include <exception>
#include <iostream>

#include "fake_oracle.hpp"

int main(int argc, char** argv) {
  std::signal(SIGPIPE, SIG_IGN);
  try {
    const auto options = bdmae::testing::parse_fake_oracle_args(argc, argv);
    bdmae::testing::serve_fake_oracle(STDIN_FILENO, STDOUT_FILENO, options);
  } catch (const std::exception& e) {
    std::cerr << "fake_oracle_server: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
