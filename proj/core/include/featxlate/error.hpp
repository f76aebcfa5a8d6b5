#pragma once

#include <stdexcept>
#include <string>

namespace featxlate {

// Base of every error the library throws; the CLI maps these to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public IoError {
 public:
  using IoError::IoError;
};

class IntegrityError : public IoError {
 public:
  using IoError::IoError;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class StageOrderError : public Error {
 public:
  using Error::Error;
};

class UnsupportedError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace featxlate
