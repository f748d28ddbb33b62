#ifndef MESORCH_ERRORS_HPP_
#define MESORCH_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace mesorch {

// Base class for all errors raised by this library.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad configuration value (out-of-range knob, mismatched preset, ...).
struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

// Malformed runtime input (shape mismatch, non-finite values, empty set).
struct InvalidInputError : Error {
  explicit InvalidInputError(const std::string& msg) : Error("invalid input: " + msg) {}
};

// Operation does not apply in the current mode (e.g. adaptive-only ops).
struct NotApplicableError : Error {
  explicit NotApplicableError(const std::string& msg) : Error("not applicable: " + msg) {}
};

// File-system failures, always carrying the offending path.
struct IoError : Error {
  explicit IoError(const std::string& msg) : Error("io error: " + msg) {}
};

// Checkpoint/config mismatch on load.
struct VersionError : Error {
  explicit VersionError(const std::string& msg) : Error("version error: " + msg) {}
};

// Training aborted (NaN loss); message carries the diagnostic path.
struct TrainAbortError : Error {
  explicit TrainAbortError(const std::string& msg) : Error("training aborted: " + msg) {}
};

}  // namespace mesorch

#endif  // MESORCH_ERRORS_HPP_
