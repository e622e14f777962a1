#include <iostream>
#include <string>
#include <vector>

#include "graphcal/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return graphcal::run_cli(args, std::cout, std::cerr);
}
