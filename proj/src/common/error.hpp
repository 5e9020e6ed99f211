#pragma once

#include <stdexcept>
#include <string>

namespace shapguard {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Bad configuration or API misuse (maps to exit/status code 1).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or missing input data (maps to exit/status code 2).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Numeric failure: non-finite values, domain violations, divergence
/// (maps to exit/status code 3).
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Tensor shape disagreement between operands.
class ShapeError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// Filesystem problems distinct from malformed content.
class IoError : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace shapguard
