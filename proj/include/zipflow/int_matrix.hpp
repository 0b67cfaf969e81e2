#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "zipflow/core.hpp"

namespace zipflow {

/// Dense square integer matrix with overflow-checked exact arithmetic.
class IntMatrix {
 public:
  IntMatrix() = default;
  explicit IntMatrix(int n) : n_(n), a_(static_cast<std::size_t>(n) * n, 0) {}

  static IntMatrix identity(int n) {
    IntMatrix m(n);
    for (int i = 0; i < n; ++i) m(i, i) = 1;
    return m;
  }

  int size() const noexcept { return n_; }
  std::int64_t& operator()(int i, int j) { return a_[static_cast<std::size_t>(i) * n_ + j]; }
  std::int64_t operator()(int i, int j) const { return a_[static_cast<std::size_t>(i) * n_ + j]; }

  bool operator==(const IntMatrix&) const = default;

  IntMatrix operator*(const IntMatrix& o) const {
    require(n_ == o.n_, "matrix size mismatch");
    IntMatrix out(n_);
    for (int i = 0; i < n_; ++i)
      for (int j = 0; j < n_; ++j) {
        std::int64_t acc = 0;
        for (int k = 0; k < n_; ++k) acc = checked_add(acc, checked_mul((*this)(i, k), o(k, j)));
        out(i, j) = acc;
      }
    return out;
  }

  IntMatrix transposed() const {
    IntMatrix t(n_);
    for (int i = 0; i < n_; ++i)
      for (int j = 0; j < n_; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  /// Exact determinant by fraction-free (Bareiss) elimination.
  std::int64_t determinant() const {
    if (n_ == 0) return 1;
    std::vector<__int128> m(a_.begin(), a_.end());
    auto at = [&](int i, int j) -> __int128& { return m[static_cast<std::size_t>(i) * n_ + j]; };
    __int128 prev = 1;
    int sign = 1;
    for (int k = 0; k < n_ - 1; ++k) {
      if (at(k, k) == 0) {
        int p = k + 1;
        while (p < n_ && at(p, k) == 0) ++p;
        if (p == n_) return 0;
        for (int j = 0; j < n_; ++j) std::swap(at(k, j), at(p, j));
        sign = -sign;
      }
      for (int i = k + 1; i < n_; ++i) {
        for (int j = k + 1; j < n_; ++j) {
          at(i, j) = (at(i, j) * at(k, k) - at(i, k) * at(k, j)) / prev;
          if (at(i, j) > kLimit || at(i, j) < -kLimit)
            throw ResourceError("determinant intermediate exceeds 64-bit range");
        }
        at(i, k) = 0;
      }
      prev = at(k, k);
    }
    return static_cast<std::int64_t>(sign * at(n_ - 1, n_ - 1));
  }

  /// Exact inverse of a matrix with determinant +-1 (adjugate / det).
  IntMatrix inverse_unimodular() const {
    const std::int64_t det = determinant();
    if (det != 1 && det != -1) throw ValidationError("matrix is not unimodular");
    IntMatrix inv(n_);
    if (n_ == 1) {
      inv(0, 0) = det;
      return inv;
    }
    for (int i = 0; i < n_; ++i)
      for (int j = 0; j < n_; ++j) {
        IntMatrix minor(n_ - 1);
        for (int r = 0, rr = 0; r < n_; ++r) {
          if (r == j) continue;
          for (int c = 0, cc = 0; c < n_; ++c) {
            if (c == i) continue;
            minor(rr, cc++) = (*this)(r, c);
          }
          ++rr;
        }
        const std::int64_t cof = ((i + j) % 2 == 0 ? 1 : -1) * minor.determinant();
        inv(i, j) = cof * det;
      }
    return inv;
  }

  /// y = M x for a real vector x.
  std::vector<double> apply(const std::vector<double>& x) const {
    require(static_cast<int>(x.size()) == n_, "vector length mismatch");
    std::vector<double> y(x.size(), 0.0);
    for (int i = 0; i < n_; ++i) {
      double acc = 0.0;
      for (int j = 0; j < n_; ++j) acc += static_cast<double>((*this)(i, j)) * x[static_cast<std::size_t>(j)];
      y[static_cast<std::size_t>(i)] = acc;
    }
    return y;
  }

  std::vector<std::vector<std::int64_t>> rows() const {
    std::vector<std::vector<std::int64_t>> out(static_cast<std::size_t>(n_));
    for (int i = 0; i < n_; ++i)
      for (int j = 0; j < n_; ++j) out[static_cast<std::size_t>(i)].push_back((*this)(i, j));
    return out;
  }

  std::string str() const {
    std::ostringstream os;
    os << '[';
    for (int i = 0; i < n_; ++i) {
      os << (i ? ",[" : "[");
      for (int j = 0; j < n_; ++j) os << (j ? "," : "") << (*this)(i, j);
      os << ']';
    }
    os << ']';
    return os.str();
  }

 private:
  static constexpr __int128 kLimit = static_cast<__int128>(INT64_MAX);

  static std::int64_t checked_mul(std::int64_t a, std::int64_t b) {
    std::int64_t r;
    if (__builtin_mul_overflow(a, b, &r)) throw ResourceError("integer matrix product overflow");
    return r;
  }
  static std::int64_t checked_add(std::int64_t a, std::int64_t b) {
    std::int64_t r;
    if (__builtin_add_overflow(a, b, &r)) throw ResourceError("integer matrix sum overflow");
    return r;
  }

  int n_ = 0;
  std::vector<std::int64_t> a_;
};

}  // namespace zipflow
