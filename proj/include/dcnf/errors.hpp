#pragma once

#include <stdexcept>
#include <string>

namespace dcnf {

// Shapes, lengths or indices that do not agree with each other.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A parameter outside its feasible set (negative beta, non-positive gamma, ...).
struct ParameterError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// The regularized Laplacian could not be factorized or a solve did not converge.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Unreadable files, malformed manifests, all-invalid depth maps.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Operation called out of order (e.g. backward before forward).
struct StateError : std::logic_error {
  using std::logic_error::logic_error;
};

}  // namespace dcnf
