#include <iostream>

#include "horizonlab/cli.hpp"

int main(int argc, char** argv) { return horizonlab::cli::run(argc, argv, std::cout, std::cerr); }
