#include <iostream>

#include "qfed/cli.hpp"

int main(int argc, char **argv) { return qfed::cli_main(argc, argv, std::cout, std::cerr); }
