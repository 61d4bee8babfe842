#pragma once

#include <stdexcept>
#include <string>

namespace gtf {

// Error categories map to CLI exit codes: config 2, data 3, numeric 4.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Operand shape violation; the message carries both shapes.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Parse failure. `position` is a byte offset for bracketed trees and a
// 1-based line number for tabular input; the message says which.
struct ParseError : DataError {
  ParseError(const std::string& what, std::size_t where)
      : DataError(what), position(where) {}
  std::size_t position;
};

}  // namespace gtf
