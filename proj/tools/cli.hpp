#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace lorafuse::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 2,
  kStructural = 3,  // also corrupt or unreadable data
  kNumeric = 4,
};

// Runs one command line (without the program name). Never throws.
int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out,
        std::ostream& err);

}  // namespace lorafuse::cli
