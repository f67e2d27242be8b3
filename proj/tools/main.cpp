#include <iostream>

#include "cmix/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return cmix::cli::run_cli(args, std::cout, std::cerr);
}
