#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace speechflow {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class SingularMatrixError : public Error {
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

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Malformed text input; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// A non-finite likelihood term; layer is the flat step index (or -1 for the prior).
class NonFiniteError : public Error {
 public:
  NonFiniteError(int layer, const std::string& what)
      : Error("non-finite value at layer " + std::to_string(layer) + ": " + what),
        layer_(layer) {}
  int layer() const { return layer_; }

 private:
  int layer_;
};

}  // namespace speechflow
