#pragma once

#include <iosfwd>

namespace g2s::cli {

enum ExitCode : int {
  kOk = 0,
  kPropertyFailure = 1,
  kInputError = 2,
  kUndefinedMetric = 3,
  kDivergence = 4,
};

// Parses argv and dispatches to a subcommand. Never throws.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace g2s::cli
