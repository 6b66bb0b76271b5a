#pragma once

#include <stdexcept>
#include <string>

namespace clvae {

// Exception hierarchy. Each kind maps onto one CLI exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const { return 2; }
};

// Bad configuration, bad flags, invalid spec values.
class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 1; }
};

// Missing files, malformed inputs, shape mismatches, violated preconditions.
class DataError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public DataError {
 public:
  using DataError::DataError;
};

// Non-finite values during training or evaluation.
class NumericalError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 3; }
};

}  // namespace clvae
