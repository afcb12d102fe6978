#include <iostream>
#include <string>
#include <vector>

#include "moe_depth/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return moe_depth::run_cli(args, std::cout, std::cerr);
}
