#pragma once

#include <stdexcept>
#include <string>

namespace mdm {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor/grid shape disagreements (non-divisible patch size, mismatched pairs).
struct DimensionError : Error {
  using Error::Error;
};

// Scalar arguments outside their admissible interval (timesteps, indices).
struct RangeError : Error {
  using Error::Error;
};

// Invalid or unknown configuration keys/values.
struct ConfigError : Error {
  using Error::Error;
};

// Bad on-disk data: labels out of range, malformed manifests or files.
struct DataError : Error {
  using Error::Error;
};

// Split overlap and other manifest-consistency failures.
struct ValidationError : Error {
  using Error::Error;
};

// Operations leaving the numerically safe domain (e.g. division by ~0).
struct NumericError : Error {
  using Error::Error;
};

// Inputs too degenerate for the requested operation (e.g. k-means on
// fewer distinct points than clusters).
struct DegenerateInputError : Error {
  using Error::Error;
};

// Training loss went non-finite and stayed there.
struct DivergenceError : Error {
  using Error::Error;
};

// Filesystem failures, annotated with the offending path.
struct IoError : Error {
  using Error::Error;
};

}  // namespace mdm
