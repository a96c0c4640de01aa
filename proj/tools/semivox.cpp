#include <string>
#include <vector>

#include "semivox/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return semivox::run_cli(args);
}
