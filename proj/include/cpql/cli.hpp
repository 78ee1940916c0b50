#pragma once

#include <string>
#include <vector>

namespace cpql {

/// Command-line entry point. Exit codes: 0 success, 2 usage or config
/// errors (message names the offending field or file), 1 runtime errors
/// and failed verification.
int run_cli(int argc, const char* const* argv);

/// Convenience overload for tests.
int run_cli(const std::vector<std::string>& args);

}  // namespace cpql
