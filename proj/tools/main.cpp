#include <iostream>

#include "mamere/cli.hpp"

int main(int argc, char** argv) {
    return mamere::cli::run(argc, argv, std::cout, std::cerr);
}
