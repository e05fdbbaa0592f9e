#pragma once

#include <stdexcept>
#include <string>

namespace qvrp {

// Error taxonomy shared across the library. Everything derives from
// std::runtime_error so callers can catch broadly or by category.

struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InfeasibleRowError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NormalizationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegenerateInputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CapacityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ArgumentError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InfeasibleMoveError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct StagnationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IncompatibleArtifactError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace qvrp
