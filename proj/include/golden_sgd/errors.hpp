#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace golden_sgd {

// Argument outside the mathematical domain of an operation.
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

// A quantity that diverges at the requested point (e.g. log of zero).
struct DivergenceError : std::domain_error {
  using std::domain_error::domain_error;
};

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TruncationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConsistencyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InsufficientDataError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct DegenerateSplitError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct UndefinedTestError : std::domain_error {
  using std::domain_error::domain_error;
};

struct NoCandidateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Raised by optimizers when a gradient buffer holds NaN or Inf.
class NonFiniteGradientError : public std::runtime_error {
 public:
  explicit NonFiniteGradientError(std::string parameter)
      : std::runtime_error("non-finite gradient in parameter '" + parameter + "'"),
        parameter_(std::move(parameter)) {}

  const std::string& parameter() const noexcept { return parameter_; }

 private:
  std::string parameter_;
};

}  // namespace golden_sgd
