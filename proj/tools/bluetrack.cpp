#include <csignal>
#include <iostream>

#include "bluetrack/cli.hpp"

namespace {

extern "C" void on_terminate(int) { bluetrack::cli::termination_flag().store(true); }

}  // namespace

int main(int argc, char** argv) {
  std::signal(SIGTERM, on_terminate);
  std::signal(SIGINT, on_terminate);
  return bluetrack::cli::run(argc, argv, std::cout, std::cerr);
}
