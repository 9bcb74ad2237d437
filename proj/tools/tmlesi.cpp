#include "cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return tmlesi::cli::run(argc, argv, std::cout, std::cerr); }
