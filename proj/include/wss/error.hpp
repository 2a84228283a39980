#pragma once

#include <stdexcept>
#include <string>

namespace wss {

/// Base of every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad user input: configuration, file contents, arguments. The CLI maps these to exit code 1.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Operand extents disagree with what an operation requires.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A forward value became NaN or infinite.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss; the model has been restored to its last good state.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// An upstream artifact changed after a downstream stage consumed it.
class StaleArtifactError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

}  // namespace wss
