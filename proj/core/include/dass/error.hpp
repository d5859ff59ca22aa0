#pragma once

#include <stdexcept>
#include <string>

namespace dass {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or API misuse detected before any computation ran.
/// The CLI maps these to exit code 1.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Incompatible tensor shapes passed to a primitive.
class ShapeError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// Malformed input file (dataset, checkpoint, genotype document).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Training diverged (non-finite loss) or a numeric precondition failed.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// An internal invariant was violated, e.g. a frozen tensor changed.
class InvariantError : public Error {
 public:
  using Error::Error;
};

}  // namespace dass
