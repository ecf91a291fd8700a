#include <iostream>

#include "nwa/cli.hpp"

int main(int argc, char** argv) { return nwa::cli::run(argc, argv, std::cout, std::cerr); }
