#include "dcfuse/commands.hpp"

#include <iostream>

int main(int argc, char** argv)
{
    return dcfuse::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
