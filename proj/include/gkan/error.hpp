#pragma once

#include <stdexcept>
#include <string>

namespace gkan {

/// Base of every error raised by the library. `category()` names the class of
/// failure; the CLI maps it onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* category() const noexcept = 0;
};

/// Shape or dimension mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "dimension"; }
};

/// Invalid configuration or geometry.
class ConfigError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "config"; }
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "domain"; }
};

/// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "numeric"; }
};

/// Malformed or inconsistent data on disk.
class DataError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "data"; }
};

/// Training diverged; carries the iteration at which the loss went non-finite.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, long iteration)
      : Error(what + " (iteration " + std::to_string(iteration) + ")"), iteration_(iteration) {}
  const char* category() const noexcept override { return "training"; }
  long iteration() const noexcept { return iteration_; }

 private:
  long iteration_;
};

}  // namespace gkan
