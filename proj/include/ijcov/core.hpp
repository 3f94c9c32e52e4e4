#pragma once

#include <Eigen/Dense>

#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ijcov {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class ErrorKind {
  invalid_argument,
  dimension_mismatch,
  numerical,  // singular fit, improper posterior, non-convergence
  parse,
  unsupported,
};

/// Structured error carried through the library. The CLI maps `numerical`
/// to exit code 2 and everything else to exit code 1.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, const std::string& message,
                    ErrorKind kind = ErrorKind::invalid_argument) {
  if (!condition) fail(kind, message);
}

using WarningSink = std::function<void(std::string_view)>;

/// Replaces the process-wide warning sink (default: stderr). Returns the old one.
WarningSink set_warning_sink(WarningSink sink);

/// Emits a non-fatal diagnostic. Thread-safe.
void warn(std::string_view message);

}  // namespace ijcov
