#include <vector>

#include "jbsde/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return jbsde::run_cli(args);
}
