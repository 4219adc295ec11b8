#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace twopass {

/// Dimension or shape incompatibility between operands.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// NaN or Inf where finite values are required.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid experiment or training configuration.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Missing, unreadable or malformed data files.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Training loss became non-finite.
struct DivergenceError : std::runtime_error {
  DivergenceError(std::int64_t iteration, const std::string& what)
      : std::runtime_error("training diverged at iteration " + std::to_string(iteration) + ": " + what),
        iteration(iteration) {}

  std::int64_t iteration;
};

}  // namespace twopass
