#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace repmil {

// Base class for every failure raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed text input; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Binary container problems (bad magic, truncation, version, shape).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Tensor / configuration dimensions that do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace repmil
