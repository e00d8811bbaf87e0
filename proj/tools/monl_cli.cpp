#include <iostream>
#include <string>
#include <vector>

#include "monl/commands.hpp"

int main(int argc, char** argv)
{
    std::vector<std::string> args(argv + 1, argv + argc);
    return monl::cli_main(args, std::cout, std::cerr);
}
