#pragma once

#include <stdexcept>
#include <string>

namespace halluc {

// Error taxonomy maps onto the CLI exit-code contract:
//   ConfigError -> 1, DataError -> 2, NumericError / ContractError -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid or inconsistent configuration (bad schema, out-of-range knob).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Problems with input data: missing files, malformed CSV, bad labels.
class DataError : public Error {
 public:
  using Error::Error;
};

// Non-finite values in numeric computation, diverging training runs.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A caller broke an API contract (shape mismatch, missing gradient,
// disjointness violation). Indicates a bug, not a user mistake.
class ContractError : public Error {
 public:
  using Error::Error;
};

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 1;
  if (dynamic_cast<const DataError*>(&e)) return 2;
  return 3;
}

}  // namespace halluc
