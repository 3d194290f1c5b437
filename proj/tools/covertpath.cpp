#include <iostream>

#include "covertpath/cli.hpp"

int main(int argc, char** argv) { return covertpath::run_cli(argc, argv, std::cout, std::cerr); }
