#pragma once

#include <stdexcept>
#include <string>

namespace mrcdpo {

/// Bad input: malformed files, violated record invariants, bad config.
/// The CLI maps these to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Failure while doing work on valid input (non-finite loss, I/O).
/// The CLI maps these to exit code 2.
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mrcdpo
