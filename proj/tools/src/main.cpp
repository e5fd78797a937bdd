#include <iostream>

#include "masc_cli/cli.hpp"

int main(int argc, char** argv) { return masc::cli::run(argc, argv, std::cout, std::cerr); }
