#pragma once

#include <stdexcept>
#include <string>

namespace opmask {

// Base for every error raised by the library. Callers that only care about
// "something went wrong" catch this; the subclasses exist so tests and the CLI
// can tell usage problems from corrupt inputs.
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

class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Raised by the trainer when a loss or gradient goes non-finite.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace opmask
