#include <iostream>

#include "doconv/cli.hpp"

int main(int argc, char** argv) {
  return doconv::cli::dispatch(argc, argv, std::cout, std::cerr);
}
