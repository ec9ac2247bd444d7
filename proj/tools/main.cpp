#include <iostream>

#include "collabvn/cli.hpp"

int main(int argc, char** argv) {
  return collabvn::run_cli({argv + 1, argv + argc}, std::cout, std::cerr);
}
