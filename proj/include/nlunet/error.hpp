#pragma once

#include <stdexcept>
#include <string>

namespace nlunet {

// Error categories. The CLI maps them onto exit codes:
//   ConfigError -> 2, DataError -> 3, NumericError -> 4, anything else -> 1.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid configuration: bad flag values, impossible dimensions, unknown keys.
struct ConfigError : Error {
  using Error::Error;
};

// Bad input data: malformed files, mismatched volumes, out-of-range labels.
struct DataError : Error {
  using Error::Error;
};

// Tensor shape / dimension mismatches.
struct ShapeError : DataError {
  using DataError::DataError;
};

// Non-finite values, failed gradient checks, diverged training.
struct NumericError : Error {
  using Error::Error;
};

// Allocation request beyond a configured budget.
struct ResourceError : Error {
  using Error::Error;
};

// API misuse: violated preconditions that indicate a caller bug.
struct ContractError : Error {
  using Error::Error;
};

}  // namespace nlunet
