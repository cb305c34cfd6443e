#include <iostream>

#include "fpslab/cli.hpp"

int main(int argc, char** argv) { return fpslab::run_cli(argc, argv, std::cout, std::cerr); }
