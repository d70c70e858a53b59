#include <iostream>

#include "deepatt/cli.hpp"

int main(int argc, char** argv) { return deepatt::run_cli(argc, argv, std::cout, std::cerr); }
