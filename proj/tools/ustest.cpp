#include <iostream>

#include "ustest/cli.hpp"

int main(int argc, char** argv) { return ustest::run_cli(argc, argv, std::cout, std::cerr); }
