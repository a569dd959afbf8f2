#include <iostream>

#include "poselift/cli.hpp"
#include "poselift/tensor.hpp"

int main(int argc, char** argv) {
    poselift::tune_allocator();
    return poselift::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
