#pragma once

#include <stdexcept>
#include <string>

namespace transfer {

/// Operand shapes do not agree.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A configuration value is outside its supported set.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// An API was called in a state or with arguments it does not accept.
struct UsageError : std::logic_error {
  using std::logic_error::logic_error;
};

/// A precondition on input data (e.g. row-stochastic matrices) was violated.
struct ContractError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Dataset content is unusable (empty class, bad file, ...).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace transfer
