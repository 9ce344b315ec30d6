#pragma once

#include <stdexcept>
#include <string>

namespace c2f {

/// Base class for every error raised by the toolkit. The CLI maps the
/// concrete subclass to an exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid scalar argument (out-of-range step index, bad schedule bounds...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Tensor shapes or channel counts that do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Input data violates a precondition (non-finite voxels, empty volume...).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Malformed or truncated file.
class FormatError : public DataError {
 public:
  using DataError::DataError;
};

/// Run configuration is invalid or inconsistent with a checkpoint.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Training diverged (non-finite loss term).
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace c2f
