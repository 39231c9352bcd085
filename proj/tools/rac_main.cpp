#include <iostream>
#include <string>
#include <vector>

#include "rac/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return rac::app::cli_dispatch(args, std::cout, std::cerr);
}
