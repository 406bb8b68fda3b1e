#include "dash/cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
    return dash::cli::run_cli(argc, argv, std::cout, std::cerr);
}
