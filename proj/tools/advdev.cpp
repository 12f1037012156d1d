#include <iostream>

#include "advdev/cli.hpp"

int main(int argc, char** argv) { return advdev::run_cli(argc, argv, std::cout, std::cerr); }
