#include <iostream>

#include "archscale/cli.hpp"

int main(int argc, char** argv) { return archscale::run_cli(argc, argv, std::cout, std::cerr); }
