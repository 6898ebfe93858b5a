#ifndef DSIN_ERRORS_HPP
#define DSIN_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace dsin {

struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape/dimension mismatches between tensors.
struct shape_error : error {
  using error::error;
};

// Contract violations on values (bad axis, index out of range, empty input).
struct value_error : error {
  using error::error;
};

// Operation requires state that has not been initialized (e.g. batch-norm
// running statistics in inference mode).
struct state_error : error {
  using error::error;
};

// Invalid or inconsistent run configuration.
struct config_error : error {
  using error::error;
};

// File I/O failures: missing files, truncation, unwritable paths.
struct io_error : error {
  using error::error;
};

// Non-finite values where finite ones are required.
struct numeric_error : error {
  using error::error;
};

// Synthetic generator could not realize the requested label moments.
struct generation_error : error {
  using error::error;
};

}  // namespace dsin

#endif  // DSIN_ERRORS_HPP
