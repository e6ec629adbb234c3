#include <iostream>

#include "cxgame/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return cxgame::dispatch(args, std::cout, std::cerr);
}
