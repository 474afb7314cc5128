#pragma once

#include <stdexcept>
#include <string>

namespace mac {

/// Shapes that do not line up for an operation.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Invalid model, dataset or run configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// API or command-line misuse (empty inputs, unknown split, non-scalar backward, ...).
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Broken invariant inside the library.
class InternalError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Malformed sample, manifest or checkpoint file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class BadMagicError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncatedFileError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ShapeMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mac
