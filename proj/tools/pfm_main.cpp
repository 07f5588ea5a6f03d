#include "pfm/cli.hpp"

int main(int argc, char** argv) {
    return pfm::cli::run({argv + 1, argv + argc});
}
