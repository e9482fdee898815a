#include <iostream>

#include "regvd/cli.hpp"

int main(int argc, char** argv) {
    return regvd::cli::run(argc, argv, std::cin, std::cout, std::cerr);
}
