#include <string>
#include <vector>

#include "magnet/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return magnet::dispatch(std::move(args));
}
