#pragma once

// Shared error types and small numeric helpers used across zipflow.

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace zipflow {

using Symbol = std::uint8_t;
using Word = std::vector<Symbol>;

/// Malformed input or a violated precondition. Maps to CLI exit code 2.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// An iterative method hit its cap before reaching tolerance. Exit code 3.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : std::runtime_error(what + " (residual " + std::to_string(residual) + ")"),
        residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

/// Enumeration or class-size budget exceeded. Exit code 4.
class ResourceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kInf = std::numeric_limits<double>::infinity();

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ValidationError(msg);
}

/// Neumaier-compensated accumulator.
class CompensatedSum {
 public:
  void add(double x) noexcept {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }
  double value() const noexcept { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

/// Integer power with overflow detection; throws ResourceError on overflow.
inline std::uint64_t checked_pow(std::uint64_t base, unsigned exp) {
  std::uint64_t out = 1;
  for (unsigned i = 0; i < exp; ++i) {
    if (base != 0 && out > std::numeric_limits<std::uint64_t>::max() / base)
      throw ResourceError("integer power overflows 64 bits");
    out *= base;
  }
  return out;
}

/// log(sum_i exp(x_i)), stable.
inline double log_sum_exp(std::span<const double> xs) {
  double m = -kInf;
  for (double x : xs) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

/// Base-L digits of `index` as a word of length `len` (most significant first).
inline Word index_to_word(std::uint64_t index, int alphabet, int len) {
  Word w(static_cast<std::size_t>(len));
  for (int j = len - 1; j >= 0; --j) {
    w[static_cast<std::size_t>(j)] = static_cast<Symbol>(index % static_cast<std::uint64_t>(alphabet));
    index /= static_cast<std::uint64_t>(alphabet);
  }
  return w;
}

inline std::uint64_t word_to_index(std::span<const Symbol> w, int alphabet) {
  std::uint64_t idx = 0;
  for (Symbol s : w) idx = idx * static_cast<std::uint64_t>(alphabet) + s;
  return idx;
}

}  // namespace zipflow
