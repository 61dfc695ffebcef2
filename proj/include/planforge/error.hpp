#pragma once

#include <stdexcept>
#include <string>

namespace planforge {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Argument outside the mathematical domain of a function.
class DomainError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// API used in the wrong order or with inconsistent inputs.
class UsageError : public Error {
 public:
  using Error::Error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

// Failed to read or validate a persisted artifact.
class LoadError : public Error {
 public:
  using Error::Error;
};

}  // namespace planforge
