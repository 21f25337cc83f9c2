#include <iostream>

#include "detach/cli/dispatch.hpp"

int main(int argc, char** argv) { return detach::cli::dispatch(argc, argv, std::cout, std::cerr); }
