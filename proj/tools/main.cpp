#include "deepwarp/cli/commands.hpp"

#include <iostream>

int main(int argc, char** argv) { return deepwarp::cli::run(argc, argv, std::cout, std::cerr); }
