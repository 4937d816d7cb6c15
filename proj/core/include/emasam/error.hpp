#pragma once

#include <stdexcept>
#include <string>

namespace emasam {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes or dimensions that do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values (bad hyperparameters, malformed schedules).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed or truncated files.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace emasam
