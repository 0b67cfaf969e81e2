#pragma once

// Zippered rectangles (lambda, pi, delta), the flow P^t, the induction map U,
// the roof function and the Hilbert-type metric.
//
// Induction convention. With k = pi^{-1}(m):
//   lambda_k > lambda_m  ->  branch a, winner k, new permutation a(pi)
//   lambda_m > lambda_k  ->  branch b, winner m, new permutation b(pi)
// and both lambda and delta transform as column vectors by A(pi, branch)^{-1}.
// This is the only assignment that keeps lambda positive, preserves area and
// maps the cone K(pi) into K(pi') (see tests/test_zippered.cpp). For m = 2
// A(pi,a) and A(pi,b) are transposes of each other, so the new lengths agree
// with the row action of the other branch matrix.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "zipflow/core.hpp"
#include "zipflow/rauzy.hpp"
#include "zipflow/rng.hpp"

namespace zipflow {

inline constexpr double kConeTolerance = 1e-12;

/// Raised when lambda_{pi^{-1} m} == lambda_m.
class NonInducibleError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Raised when a coordinate ratio in the metric has a zero denominator.
class MetricUndefinedError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Partial sums delta_1+..+delta_i <= 0 and delta_{pi^-1 1}+..+delta_{pi^-1 i} >= 0, i < m.
inline bool cone_contains(const Permutation& pi, std::span<const double> delta,
                          double tol = kConeTolerance) {
  const int m = pi.size();
  require(static_cast<int>(delta.size()) == m, "delta length does not match permutation size");
  double top = 0.0, bottom = 0.0;
  for (int i = 1; i < m; ++i) {
    top += delta[static_cast<std::size_t>(i - 1)];
    bottom += delta[static_cast<std::size_t>(pi.inv(i) - 1)];
    if (top > tol || bottom < -tol) return false;
  }
  return true;
}

struct ZipperedRectangle {
  std::vector<double> lambda;
  Permutation pi;
  std::vector<double> delta;

  int size() const noexcept { return pi.size(); }
  double lambda_norm() const {
    double s = 0.0;
    for (double l : lambda) s += l;
    return s;
  }

  /// Throws ValidationError unless lambda > 0, delta in K(pi) and pi irreducible.
  void validate(double tol = kConeTolerance) const {
    const auto m = static_cast<std::size_t>(pi.size());
    require(lambda.size() == m && delta.size() == m, "lambda/delta length must equal m");
    require(is_irreducible(pi), "permutation " + pi.str() + " is reducible");
    for (double l : lambda) require(l > 0.0 && std::isfinite(l), "lambda entries must be positive");
    for (double d : delta) require(std::isfinite(d), "delta entries must be finite");
    require(cone_contains(pi, delta, tol), "delta is outside the cone K(pi)");
  }
};

/// h_r = -sum_{i<r} delta_i + sum_{l<pi(r)} delta_{pi^-1 l}.
inline std::vector<double> heights(const ZipperedRectangle& x) {
  const int m = x.size();
  std::vector<double> top_prefix(static_cast<std::size_t>(m) + 1, 0.0), bottom_prefix(static_cast<std::size_t>(m) + 1, 0.0);
  for (int i = 1; i <= m; ++i) {
    top_prefix[static_cast<std::size_t>(i)] = top_prefix[static_cast<std::size_t>(i - 1)] + x.delta[static_cast<std::size_t>(i - 1)];
    bottom_prefix[static_cast<std::size_t>(i)] = bottom_prefix[static_cast<std::size_t>(i - 1)] + x.delta[static_cast<std::size_t>(x.pi.inv(i) - 1)];
  }
  std::vector<double> h(static_cast<std::size_t>(m));
  for (int r = 1; r <= m; ++r)
    h[static_cast<std::size_t>(r - 1)] = -top_prefix[static_cast<std::size_t>(r - 1)] + bottom_prefix[static_cast<std::size_t>(x.pi(r) - 1)];
  return h;
}

/// a_i = -delta_1 - ... - delta_{i-1}; a_1 = 0.
inline std::vector<double> a_vector(const ZipperedRectangle& x) {
  std::vector<double> a(x.delta.size(), 0.0);
  for (std::size_t i = 1; i < a.size(); ++i) a[i] = a[i - 1] - x.delta[i - 1];
  return a;
}

/// sum_r lambda_r h_r.
inline double area(const ZipperedRectangle& x) {
  const auto h = heights(x);
  CompensatedSum s;
  for (std::size_t r = 0; r < h.size(); ++r) s.add(x.lambda[r] * h[r]);
  return s.value();
}

/// The delta-weighted form: sum_i delta_i (-sum_{r>i} lambda_r + sum_{r>pi(i)} lambda_{pi^-1 r}).
inline double area_by_delta(const ZipperedRectangle& x) {
  const int m = x.size();
  CompensatedSum s;
  for (int i = 1; i <= m; ++i) {
    double coef = 0.0;
    for (int r = i + 1; r <= m; ++r) coef -= x.lambda[static_cast<std::size_t>(r - 1)];
    for (int r = x.pi(i) + 1; r <= m; ++r) coef += x.lambda[static_cast<std::size_t>(x.pi.inv(r) - 1)];
    s.add(x.delta[static_cast<std::size_t>(i - 1)] * coef);
  }
  return s.value();
}

/// P^t: lambda -> e^t lambda, delta -> e^{-t} delta.
inline ZipperedRectangle flow(const ZipperedRectangle& x, double t) {
  ZipperedRectangle y = x;
  const double up = std::exp(t), down = std::exp(-t);
  for (double& l : y.lambda) l *= up;
  for (double& d : y.delta) d *= down;
  return y;
}

namespace detail {

// A(pi,a)^{-1} v, k = pi^{-1}(m), 1-based formulas.
inline std::vector<double> apply_inverse_a(const std::vector<double>& v, int k) {
  const int m = static_cast<int>(v.size());
  std::vector<double> y(v.size());
  for (int j = 1; j < k; ++j) y[static_cast<std::size_t>(j - 1)] = v[static_cast<std::size_t>(j - 1)];
  y[static_cast<std::size_t>(k - 1)] = v[static_cast<std::size_t>(k - 1)] - v[static_cast<std::size_t>(m - 1)];
  y[static_cast<std::size_t>(k)] = v[static_cast<std::size_t>(m - 1)];
  for (int j = k + 2; j <= m; ++j) y[static_cast<std::size_t>(j - 1)] = v[static_cast<std::size_t>(j - 2)];
  return y;
}

// A(pi,b)^{-1} v.
inline std::vector<double> apply_inverse_b(const std::vector<double>& v, int k) {
  std::vector<double> y = v;
  y.back() = v.back() - v[static_cast<std::size_t>(k - 1)];
  return y;
}

}  // namespace detail

struct Induction {
  ZipperedRectangle next;
  RauzyLabel branch;
  int winner;  // 1-based symbol
};

/// The map U.
inline Induction induce(const ZipperedRectangle& x) {
  const int m = x.size();
  const int k = x.pi.inv(m);
  const double lk = x.lambda[static_cast<std::size_t>(k - 1)];
  const double lm = x.lambda[static_cast<std::size_t>(m - 1)];
  if (lk == lm)
    throw NonInducibleError("non-inducible: lambda_{pi^-1 m} == lambda_m");
  Induction out;
  if (lk > lm) {
    out.branch = RauzyLabel::a;
    out.winner = k;
    out.next = {detail::apply_inverse_a(x.lambda, k), rauzy_a(x.pi), detail::apply_inverse_a(x.delta, k)};
  } else {
    out.branch = RauzyLabel::b;
    out.winner = m;
    out.next = {detail::apply_inverse_b(x.lambda, k), rauzy_b(x.pi), detail::apply_inverse_b(x.delta, k)};
  }
  return out;
}

/// Renormalization time of one induction step: -log((|lambda| - min(lambda_m, lambda_{pi^-1 m})) / |lambda|).
inline double roof(std::span<const double> lambda, const Permutation& pi) {
  const int m = pi.size();
  require(static_cast<int>(lambda.size()) == m, "lambda length must equal m");
  double norm = 0.0;
  for (double l : lambda) {
    require(l > 0.0 && std::isfinite(l), "roof needs a positive lambda");
    norm += l;
  }
  const double cut = std::min(lambda[static_cast<std::size_t>(m - 1)], lambda[static_cast<std::size_t>(pi.inv(m) - 1)]);
  require(cut < norm, "degenerate lambda");
  return -std::log1p(-cut / norm);
}

struct RenormalizedStep {
  ZipperedRectangle next;  // |lambda| == 1
  double elapsed;
  RauzyLabel branch;
  int winner;
};

/// induce followed by P^tau, so the new lambda has unit norm again.
inline RenormalizedStep renormalized_step(const ZipperedRectangle& x) {
  require(std::abs(x.lambda_norm() - 1.0) <= 1e-9, "renormalized_step expects |lambda| = 1");
  const double tau = roof(x.lambda, x.pi);
  Induction ind = induce(x);
  RenormalizedStep out{flow(ind.next, tau), tau, ind.branch, ind.winner};
  // Rescale exactly onto the unit simplex; the flow factor is 1/(1-cut) up to rounding.
  const double norm = out.next.lambda_norm();
  for (double& l : out.next.lambda) l /= norm;
  return out;
}

/// Hilbert-type distance between zippered rectangles.
///
/// Coordinates that vanish identically for the given permutation (a_1, and
/// h_r - a_r where pi(r) = 1) carry no information and are skipped. Any other
/// zero coordinate makes the metric undefined.
inline double distance(const ZipperedRectangle& x, const ZipperedRectangle& y) {
  const int m = x.size();
  require(y.size() == m, "distance needs rectangles of the same size");
  const auto hx = heights(x), hy = heights(y);
  const auto ax = a_vector(x), ay = a_vector(y);
  double hi = -kInf, lo = kInf;
  auto take = [&](double num, double den, const char* what, int i) {
    if (den == 0.0 || num == 0.0)
      throw MetricUndefinedError(std::string("metric undefined at this pair: zero ") + what +
                                 " coordinate at index " + std::to_string(i));
    const double r = num / den;
    hi = std::max(hi, r);
    lo = std::min(lo, r);
  };
  for (int i = 1; i <= m; ++i) {
    const auto s = static_cast<std::size_t>(i - 1);
    take(x.lambda[s], y.lambda[s], "lambda", i);
    take(hx[s], hy[s], "h", i);
    if (i > 1) take(std::abs(ax[s]), std::abs(ay[s]), "a", i);
    if (x.pi(i) != 1 && y.pi(i) != 1) take(std::abs(hx[s] - ax[s]), std::abs(hy[s] - ay[s]), "h-a", i);
  }
  const double d = std::log(hi / lo);
  const bool same_chart = x.pi == y.pi && ax.back() / ay.back() > 0.0;
  return same_chart ? d : 2.0 + d;
}

struct ItineraryLetter {
  RauzyLabel branch;
  int winner;
};

struct Itinerary {
  std::vector<ItineraryLetter> letters;
  std::vector<double> roof_times;
  double total_time = 0.0;
  std::optional<std::string> error;  // set when the orbit stopped early
  ZipperedRectangle last;
};

/// n renormalized steps from x; stops with a marker on a non-inducible point.
inline Itinerary symbolic_itinerary(const ZipperedRectangle& x, std::size_t n) {
  Itinerary it;
  it.last = x;
  CompensatedSum total;
  for (std::size_t i = 0; i < n; ++i) {
    try {
      RenormalizedStep st = renormalized_step(it.last);
      it.letters.push_back({st.branch, st.winner});
      it.roof_times.push_back(st.elapsed);
      total.add(st.elapsed);
      it.last = std::move(st.next);
    } catch (const NonInducibleError& e) {
      it.error = "step " + std::to_string(i) + ": " + e.what();
      break;
    }
  }
  it.total_time = total.value();
  return it;
}

/// Random valid rectangle: lambda uniform on the unit simplex, delta drawn in
/// K(pi) by rejection from [-1,1]^m and scaled to unit area when requested.
inline ZipperedRectangle sample_zippered(const Permutation& pi, RandomStream& rng,
                                         bool unit_area = true) {
  require_irreducible(pi);
  const auto m = static_cast<std::size_t>(pi.size());
  ZipperedRectangle x{std::vector<double>(m), pi, std::vector<double>(m)};
  double norm = 0.0;
  for (double& l : x.lambda) norm += (l = rng.exponential());
  for (double& l : x.lambda) l /= norm;
  for (int attempt = 0;; ++attempt) {
    if (attempt > 1'000'000) throw ResourceError("cone rejection sampling did not succeed");
    for (double& d : x.delta) d = 2.0 * rng.uniform() - 1.0;
    if (!cone_contains(pi, x.delta, 0.0)) continue;
    const double ar = area(x);
    if (ar < 1e-3) continue;
    if (unit_area)
      for (double& d : x.delta) d /= ar;
    return x;
  }
}

}  // namespace zipflow
