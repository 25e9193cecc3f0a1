#pragma once

#include <stdexcept>
#include <string>

namespace dsd {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An input violated a documented precondition (shape, symmetry, orthonormality).
class PreconditionError : public Error {
 public:
  using Error::Error;
};

class SingularCovarianceError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of the operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Generator parameters outside the feasible set {U^T U = I, V^T V > 0}.
class ConstraintError : public Error {
 public:
  using Error::Error;
};

class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

/// Training loss exceeded the divergence threshold.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, long step, double loss)
      : Error(what), step_(step), loss_(loss) {}
  long step() const noexcept { return step_; }
  double loss() const noexcept { return loss_; }

 private:
  long step_;
  double loss_;
};

/// Malformed or schema-violating experiment configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace dsd
