#pragma once

#include <stdexcept>
#include <string>

namespace mgc {

// Bad input data or configuration. The CLI maps this to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not conform.
class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// API misuse (non-scalar backward root, bad unfolding mode, ...).
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Non-finite values, failed factorizations, divergence. CLI exit code 2.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Persisted files that cannot be read back.
class LoadError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

}  // namespace mgc
