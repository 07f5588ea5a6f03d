#pragma once

#include <string>
#include <vector>

namespace pfm::cli {

/// Parses and runs one subcommand. Exit codes: 0 success, 1 usage or
/// configuration error, 2 runtime or numerical error.
int run(const std::vector<std::string>& args);

}  // namespace pfm::cli
