#pragma once

#include <stdexcept>
#include <string>

namespace a5 {

// Base for everything thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Caller passed inconsistent shapes / indices.
struct ShapeError : Error {
  using Error::Error;
};

// A file or stream could not be read/written.
struct IoError : Error {
  using Error::Error;
};

// A file was readable but its contents are not a valid instance of the
// expected format (bad magic, truncated payload, inconsistent manifest...).
struct FormatError : Error {
  using Error::Error;
};

// Non-finite values or numerically impossible requests.
struct NumericError : Error {
  using Error::Error;
};

// Bad run configuration (CLI flags, config file).
struct ConfigError : Error {
  using Error::Error;
};

}  // namespace a5
