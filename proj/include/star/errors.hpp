#pragma once

#include <stdexcept>
#include <string>

namespace star {

// Base of everything the library throws on a contract violation.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or rank mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Index outside the addressed range (gather/scatter, support pairs, labels).
class IndexError : public Error {
 public:
  using Error::Error;
};

// Non-finite values produced or detected at an op boundary.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed input files (topology, .skeleton, manifests, checkpoints).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value; message starts with the offending key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Generic precondition failure (empty dataset, bad hyperparameter, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

}  // namespace star
