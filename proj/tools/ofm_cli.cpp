#include <iostream>

#include "ofm/harness/cli.hpp"

int main(int argc, char** argv) { return ofm::harness::run_cli(argc, argv, std::cout, std::cerr); }
