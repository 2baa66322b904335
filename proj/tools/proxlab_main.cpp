#include <iostream>

#include "proxlab/cli.hpp"

int main(int argc, char** argv) { return proxlab::run_cli(argc, argv, std::cout, std::cerr); }
