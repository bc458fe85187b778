#pragma once

#include <stdexcept>
#include <string>

namespace invlab {

/// Base class for all invlab errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Operand shapes are incompatible. Message names both shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A call-level precondition was violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A config or dataset field is out of its allowed domain.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A file could not be parsed. Message carries the line number.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Training diverged. Carries the epoch at which the loss went non-finite.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, int epoch) : Error(what), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_ = -1;
};

/// Attack could not proceed (e.g. non-finite initial loss).
class AttackError : public Error {
 public:
  using Error::Error;
};

/// Trace normalization is impossible (zero leading value).
class NormalizationError : public Error {
 public:
  using Error::Error;
};

/// Filesystem / IO failure.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Unknown experiment name, bad CLI arguments and the like.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace invlab
