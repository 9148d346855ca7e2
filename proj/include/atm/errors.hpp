#pragma once

#include <stdexcept>
#include <string>

namespace atm {

/// Shape or dimension disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A value left the finite reals, or an operation was applied outside its domain.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EmptyReductionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class RankError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed file contents; the message carries a row or byte offset.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace atm
