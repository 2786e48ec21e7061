#pragma once

#include <string>
#include <vector>

namespace jbsde {

// Runs one CLI invocation (argv-style, without the program name).
// Returns the process exit status: 0 success, 1 validation failure,
// 2 numerical failure.
int run_cli(const std::vector<std::string>& args);

}  // namespace jbsde
