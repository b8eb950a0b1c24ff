#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mcse {

inline constexpr double kPi = 3.14159265358979323846;

/// Error categories used across the toolkit. The CLI maps config errors to
/// exit code 2 and everything else to exit code 1.
enum class errc {
  invalid_argument,
  shape_mismatch,
  io_failure,
  malformed_header,
  unsupported_codec,
  numeric_error,
  config_error,
};

class Error : public std::runtime_error {
 public:
  Error(errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  errc code() const noexcept { return code_; }

 private:
  errc code_;
};

[[noreturn]] inline void fail(errc code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, errc code, const std::string& message) {
  if (!condition) fail(code, message);
}

using Index = Eigen::Index;

}  // namespace mcse
