#include <iostream>

#include "jens/cli.hpp"

int main(int argc, char** argv) { return jens::run_cli(argc, argv, std::cout, std::cerr); }
