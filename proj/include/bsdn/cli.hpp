#pragma once

// Command-line front end. Kept in the library so tests can drive it in-process.

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace bsdn {

inline constexpr std::string_view kToolVersion = "1.0.0";

enum ExitCode : int {
    kExitOk = 0,
    kExitUsage = 1,
    kExitData = 2,
    kExitNumerical = 3,
};

/// argv[0] is the program name. Never throws; errors become exit codes and text on `err`.
int run_cli(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err);

}  // namespace bsdn
