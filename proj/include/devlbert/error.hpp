#pragma once

#include <stdexcept>
#include <string>

namespace devlbert {

/// Shape or dimension disagreement between operands.
struct DimensionError : std::invalid_argument {
  explicit DimensionError(const std::string& msg) : std::invalid_argument(msg) {}
};

/// Malformed input data, config, or contract violation.
struct ValidationError : std::invalid_argument {
  explicit ValidationError(const std::string& msg) : std::invalid_argument(msg) {}
};

/// Non-finite values where finite ones are required (NaN loss, overflow).
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

/// A query whose estimator is undefined on the given data (zero denominator strata).
struct UndefinedError : std::domain_error {
  explicit UndefinedError(const std::string& msg) : std::domain_error(msg) {}
};

}  // namespace devlbert
