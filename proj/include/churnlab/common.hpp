#pragma once

#include <stdexcept>
#include <string>

namespace churnlab {

// Probability floor applied before any logarithm; rows are renormalized after
// clamping so they stay on the simplex.
inline constexpr double kProbEps = 1e-7;

// Bad call arguments: shape mismatches, out-of-range parameters.
class UsageError : public std::runtime_error {
 public:
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad configuration: unknown keys, inconsistent net/data dimensions.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed input files.
class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// NaN/Inf encountered mid-computation.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace churnlab
