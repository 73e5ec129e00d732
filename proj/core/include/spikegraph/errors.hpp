#pragma once

#include <stdexcept>
#include <string>

namespace spikegraph {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Extents do not agree (matmul inner dims, concat axes, kernel vs input).
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the accepted domain (empty batch, negative adjacency, ...).
class InvalidInputError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values where finite ones are required.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Malformed text input; carries the 1-based line where parsing stopped.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Well-formed input with the wrong content (e.g. joint count).
class FormatError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace spikegraph
