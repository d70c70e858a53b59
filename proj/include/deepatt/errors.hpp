#pragma once

#include <stdexcept>
#include <string>

namespace deepatt {

// Base for every error raised by the library. The CLI maps subclasses onto
// exit codes (usage 1, data 2, numeric 3).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value (keep probability, head count, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent input data.
class DataError : public Error {
 public:
  using Error::Error;
};

// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// API misuse, e.g. backward on a non-scalar or on a consumed graph.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace deepatt
