#include <acnet/cli.hpp>

#include <iostream>

int main(int argc, char** argv) { return acnet::cli::run(argc, argv, std::cout, std::cerr); }
