#include <iostream>

#include "uotalign/commands.hpp"

int main(int argc, char** argv) { return uotalign::run_cli(argc, argv, std::cout, std::cerr); }
