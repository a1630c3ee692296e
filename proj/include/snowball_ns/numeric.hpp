#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>

namespace snowball_ns {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Precondition violated by a caller (bad dimension, out-of-range argument).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A numerical failure during a run (NaN likelihood, sampler failure).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Broken internal invariant; indicates a bug, not bad input.
class InvariantError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// ln(exp(a) + exp(b)), exact for -inf operands.
inline double log_add_exp(double a, double b) noexcept {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(-std::abs(a - b)));
}

inline double log_sum_exp(std::span<const double> xs) noexcept {
  double hi = kNegInf;
  for (double x : xs) hi = std::max(hi, x);
  if (hi == kNegInf) return kNegInf;
  if (std::isinf(hi)) return hi;
  double acc = 0.0;
  for (double x : xs) acc += std::exp(x - hi);
  return hi + std::log(acc);
}

inline std::uint64_t double_bits(double x) noexcept { return std::bit_cast<std::uint64_t>(x); }
inline double bits_double(std::uint64_t b) noexcept { return std::bit_cast<double>(b); }

}  // namespace snowball_ns
