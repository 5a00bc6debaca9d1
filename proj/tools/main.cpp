#include <iostream>

#include "tecno/cli.hpp"

int main(int argc, char** argv) { return tecno::cli::run(argc, argv, std::cin, std::cout, std::cerr); }
