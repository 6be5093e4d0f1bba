#pragma once

#include <stdexcept>
#include <string>

namespace crisk {

// Error taxonomy shared by every module. The CLI maps these onto exit codes
// (config 2, data 3, numeric 4).

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace crisk
