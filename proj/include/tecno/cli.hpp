#pragma once

#include <iosfwd>

namespace tecno::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kDataError = 2,
  kNumericError = 3,
};

/// Entry point of the `tecno` tool. Subcommands: gen-data, train, eval,
/// infer, stream, ablate.
int run(int argc, const char* const* argv, std::istream& in, std::ostream& out, std::ostream& err);

}  // namespace tecno::cli
