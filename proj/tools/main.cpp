#include <iostream>

#include "ecpt/cli.hpp"

int main(int argc, char** argv) { return ecpt::run_cli(argc, argv, std::cout, std::cerr); }
