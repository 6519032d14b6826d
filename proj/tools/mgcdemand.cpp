#include <iostream>

#include "mgc/cli.hpp"

int main(int argc, char** argv) { return mgc::cli::run_cli(argc, argv, std::cout, std::cerr); }
