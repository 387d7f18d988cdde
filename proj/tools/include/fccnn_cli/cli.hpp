#pragma once

#include <ostream>

namespace fccnn::cli {

enum ExitCode : int {
  kSuccess = 0,
  kCheckFailed = 1,  // a gradient check, metric or run-time failure
  kUsage = 2,        // bad flags, bad config, missing or malformed input
};

/// Entry point of the fccnn tool. Commands: generate, oversegment, train,
/// infer, eval, gradcheck.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace fccnn::cli
