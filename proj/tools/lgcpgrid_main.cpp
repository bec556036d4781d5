#include <string>
#include <vector>

#include "lgcp/cli.hpp"

int main(int argc, char** argv) {
    return lgcp::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
