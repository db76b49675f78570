#include <iostream>

#include "fedegg/cli.hpp"

int main(int argc, char** argv) { return fedegg::cli::dispatch(argc, argv, std::cout, std::cerr); }
