#include "dropair/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return dropair::cli::run(argc, argv, std::cout, std::cerr); }
