#pragma once

#include <stdexcept>
#include <string>

namespace poseforge {

/// Process exit codes used by the command-line tool.
enum class ExitCode : int {
  success = 0,
  usage = 1,
  data = 2,
  numeric = 3,
  state = 4,
};

/// Base of every error the library raises. Each subclass maps to one exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  [[nodiscard]] virtual ExitCode exit_code() const noexcept { return ExitCode::usage; }
};

class UsageError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or unknown key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Tensor shapes that do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
  [[nodiscard]] ExitCode exit_code() const noexcept override { return ExitCode::data; }
};

/// Malformed or inconsistent input data.
class DataError : public Error {
 public:
  using Error::Error;
  [[nodiscard]] ExitCode exit_code() const noexcept override { return ExitCode::data; }
};

/// Non-finite values or a failed numerical verification.
class NumericError : public Error {
 public:
  using Error::Error;
  [[nodiscard]] ExitCode exit_code() const noexcept override { return ExitCode::numeric; }
};

/// An operation was requested in a state that cannot support it.
class StateError : public Error {
 public:
  using Error::Error;
  [[nodiscard]] ExitCode exit_code() const noexcept override { return ExitCode::state; }
};

}  // namespace poseforge
