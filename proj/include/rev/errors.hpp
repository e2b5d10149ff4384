#pragma once

#include <stdexcept>
#include <string>

namespace rev {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Sequence length not admissible for the requested transform.
class LengthError : public Error {
 public:
  using Error::Error;
};

// Non-finite input.
class DomainError : public Error {
 public:
  using Error::Error;
};

class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Training diverged or a gradient went non-finite.
class NumericError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  DataError(const std::string& msg, int line = 0, int column = 0)
      : Error(line > 0 ? msg + " (line " + std::to_string(line) +
                             (column > 0 ? ", column " + std::to_string(column) : std::string()) + ")"
                       : msg),
        line_(line),
        column_(column) {}

  int line() const noexcept { return line_; }
  int column() const noexcept { return column_; }

 private:
  int line_;
  int column_;
};

}  // namespace rev
