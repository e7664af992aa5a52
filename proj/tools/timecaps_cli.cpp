#include <iostream>

#include "timecaps/cli.hpp"

int main(int argc, char** argv) { return timecaps::cli::run_cli(argc, argv, std::cout, std::cerr); }
