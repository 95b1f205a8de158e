#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace slingshot {

// Every error raised by the library derives from Error so callers (the CLI in
// particular) can map categories onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Caller broke an operation's precondition (non-scalar loss, bad argument).
class ContractError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

// Zero-norm row or direction where a normalization is required.
class SingularInputError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

// Non-finite gradient seen by an optimizer step.
class NonFiniteGradientError : public NumericalError {
 public:
  NonFiniteGradientError(std::size_t step, std::size_t index, std::string parameter)
      : NumericalError("non-finite gradient at step " + std::to_string(step) + ", parameter '" +
                       parameter + "' (flat index " + std::to_string(index) + ")"),
        step_(step),
        index_(index),
        parameter_(std::move(parameter)) {}

  std::size_t step() const noexcept { return step_; }
  std::size_t index() const noexcept { return index_; }
  const std::string& parameter() const noexcept { return parameter_; }

 private:
  std::size_t step_;
  std::size_t index_;
  std::string parameter_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents (checkpoint, CIFAR batch, metric log).
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace slingshot
