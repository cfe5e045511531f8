#pragma once

#include <stdexcept>
#include <string>

namespace twostream {

// Shapes or extents that cannot be combined.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// API misuse: backward from a non-scalar, empty reference, and so on.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Bad or inconsistent configuration. The CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// NaN or inf where a finite value is required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Stored digest disagrees with file content.
class CorruptionError : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace twostream
