#include <iostream>

#include "commands.hpp"

int main(int argc, char** argv) { return g2s::cli::run(argc, argv, std::cout, std::cerr); }
