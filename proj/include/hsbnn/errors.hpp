#pragma once

#include <stdexcept>
#include <string>

namespace hsbnn {

// Base class for all library errors.
struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Tensor shape or axis mismatch.
struct DimensionError : Error {
  using Error::Error;
};

// Argument outside the mathematical domain of an operation.
struct DomainError : Error {
  using Error::Error;
};

// API misuse (e.g. backward on a non-scalar root).
struct ContractError : Error {
  using Error::Error;
};

// Invalid or missing configuration.
struct ConfigError : Error {
  using Error::Error;
};

// Malformed input file (CSV, IDX, checkpoint).
struct DataFormatError : Error {
  using Error::Error;
};

// Non-finite values encountered during optimization.
struct NumericalError : Error {
  using Error::Error;
};

}  // namespace hsbnn
