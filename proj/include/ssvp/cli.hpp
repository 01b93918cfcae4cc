#pragma once

#include <string>
#include <vector>

namespace ssvp::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 2,
  kDataError = 3,
  kNumericError = 4,
};

/// Parses and runs one command. `args` excludes the program name.
int run(const std::vector<std::string>& args);

}  // namespace ssvp::cli
