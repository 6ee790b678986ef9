#pragma once

#include <stdexcept>
#include <string>

namespace hemf {

// Argument outside the domain of a special function or model constraint.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Cholesky factorization failed on a matrix that must be positive definite.
class NotPositiveDefinite : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A quantity that must be finite (ELBO term, factor norm, ...) is NaN/Inf or diverged.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input: rating files, chunk streams, splits, checkpoints.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace hemf
