#pragma once

#include <stdexcept>
#include <string>

namespace dml {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or length mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Zero-norm vector, empty denominator, or a batch with no usable structure.
class DegenerateError : public Error {
 public:
  using Error::Error;
};

/// Hyperparameter or option outside its admissible range.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Class index out of range or unknown to a proxy bank.
class LabelError : public Error {
 public:
  using Error::Error;
};

/// Triplet or anchor/positive pairing that violates its label constraints.
class PairingError : public Error {
 public:
  using Error::Error;
};

/// The finite-difference oracle hit a non-finite evaluation.
class OracleError : public Error {
 public:
  using Error::Error;
};

/// Training diverged (non-finite loss or parameters).
class DivergenceError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace dml
