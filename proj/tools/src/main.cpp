#include <iostream>

#include "fccnn_cli/cli.hpp"

int main(int argc, char** argv) { return fccnn::cli::run(argc, argv, std::cout, std::cerr); }
