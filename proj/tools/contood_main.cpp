#include <iostream>

#include "contood/cli.hpp"

int main(int argc, char** argv) {
  return contood::run_cli(argc, argv, std::cout, std::cerr);
}
