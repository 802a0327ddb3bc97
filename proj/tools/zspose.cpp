#include <iostream>

#include "zspose/cli.hpp"

int main(int argc, char** argv) { return zspose::run_cli(argc, argv, std::cout, std::cerr); }
