#include <iostream>

#include "mfsm/cli.hpp"

int main(int argc, char** argv) {
  return mfsm::cli::run(argc, argv, std::cout, std::cerr);
}
