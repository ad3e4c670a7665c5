#include <iostream>
#include <string>
#include <vector>

#include "umrl/cli.hpp"

int main(int argc, char** argv)
{
    return umrl::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
