#include <iostream>

#include "relux/cli.hpp"

int main(int argc, char** argv) { return relux::dispatch(argc, argv, std::cout, std::cerr); }
