#pragma once

#include <stdexcept>
#include <string>

namespace stencilseer {

/// Tensor or kernel dimensions do not fit the requested operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Invalid model, generator or run configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// An API was called out of order or with inconsistent handles.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Explicit scheme would violate its CFL-type bound.
class StabilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Pure-Neumann source does not integrate to zero.
class CompatibilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed dataset, weights or manifest file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace stencilseer
