#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace stmtl {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor shape disagreement; the message names both shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Input outside an operation's mathematical domain (e.g. log of a
/// non-positive entry).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Violated API precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid user configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite value where a finite one is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

enum class Dtype : std::uint8_t { f32 = 0, f64 = 1 };

inline const char* dtype_name(Dtype d) { return d == Dtype::f32 ? "f32" : "f64"; }

std::string shape_str(const std::vector<std::int64_t>& dims);

}  // namespace stmtl
