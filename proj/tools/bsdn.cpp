#include <iostream>
#include <string>
#include <vector>

#include "bsdn/cli.hpp"

int main(int argc, char** argv) {
    return bsdn::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
