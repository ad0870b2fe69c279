#pragma once

#include <string>
#include <vector>

namespace mtf::cli {

/// Exit codes of the command-line tool.
enum ExitCode : int {
  kSuccess = 0,
  kUsageError = 1,
  kDataError = 2,
  kNumericalError = 3,
};

/// Environment variable naming the default output directory.
inline constexpr const char* kOutputDirEnv = "MTF_OUTPUT_DIR";

/// Parses and dispatches a subcommand; never throws.
int run(int argc, const char* const* argv);
/// Same, with the arguments after the program name.
int run(const std::vector<std::string>& args);

}  // namespace mtf::cli
