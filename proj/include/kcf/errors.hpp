#pragma once

#include <stdexcept>
#include <string>

namespace kcf {

/// Shape or length mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A value that must be finite was NaN or infinite.
class NonFiniteError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// RK4 produced a non-finite state.
class IntegrationFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or out-of-range configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A pipeline stage was invoked before the artifacts it depends on exist.
class StagePreconditionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Blockwise factorization retained no block, so the bilinear input term vanishes.
class EmptySelectionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace kcf
