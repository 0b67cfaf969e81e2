#pragma once

// Interval estimates, quantiles, goodness of fit and the weighted slope fit.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "zipflow/core.hpp"

namespace zipflow::stats {

inline double normal_quantile(double p) {
  require(p > 0.0 && p < 1.0, "quantile level must lie in (0, 1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

inline double t_quantile(double p, double dof) {
  require(p > 0.0 && p < 1.0, "quantile level must lie in (0, 1)");
  require(dof > 0.0, "degrees of freedom must be positive");
  return boost::math::quantile(boost::math::students_t_distribution<double>(dof), p);
}

struct Interval {
  double lo;
  double hi;
};

/// Wilson score interval for hits / n at the given two-sided level.
inline Interval wilson(std::uint64_t hits, std::uint64_t n, double level = 0.95) {
  require(n > 0 && hits <= n, "wilson interval needs 0 <= hits <= n, n > 0");
  const double z = normal_quantile(0.5 + 0.5 * level);
  const double N = static_cast<double>(n), p = static_cast<double>(hits) / N;
  const double den = 1.0 + z * z / N;
  const double centre = (p + z * z / (2.0 * N)) / den;
  const double half = z * std::sqrt(p * (1.0 - p) / N + z * z / (4.0 * N * N)) / den;
  return {hits == 0 ? 0.0 : std::max(0.0, centre - half), hits == n ? 1.0 : std::min(1.0, centre + half)};
}

/// Standard error used in agreement checks: half-width of the 68% Wilson interval.
inline double wilson_se(std::uint64_t hits, std::uint64_t n) {
  const Interval i = wilson(hits, n, 0.6826894921370859);
  return 0.5 * (i.hi - i.lo);
}

/// sup |F_n - F| for a sample against a continuous cdf.
template <class Cdf>
double ks_statistic(std::vector<double> xs, Cdf&& cdf) {
  require(!xs.empty(), "KS statistic needs a sample");
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double F = cdf(xs[i]);
    d = std::max({d, (static_cast<double>(i) + 1.0) / n - F, F - static_cast<double>(i) / n});
  }
  return d;
}

/// Asymptotic Kolmogorov critical value c(alpha)/sqrt(n).
inline double ks_critical(std::size_t n, double alpha) {
  require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
  return std::sqrt(-0.5 * std::log(alpha / 2.0)) / std::sqrt(static_cast<double>(n));
}

/// P(K > sqrt(n) d) from the Kolmogorov series.
inline double ks_pvalue(double d, std::size_t n) {
  const double x = std::sqrt(static_cast<double>(n)) * d;
  if (x < 1e-3) return 1.0;
  double s = 0.0;
  for (int k = 1; k <= 200; ++k) {
    const double term = std::exp(-2.0 * k * k * x * x);
    s += (k % 2 ? 2.0 : -2.0) * term;
    if (term < 1e-300) break;
  }
  return std::clamp(s, 0.0, 1.0);
}

struct SlopeFit {
  double slope;
  double intercept;
  double half_width;  // CI half-width on the slope
  double se;
  double residual_sd;
  std::size_t points;
  double level;
};

/// Weighted least squares y = a + b x; CI from the residual variance with
/// a Student-t quantile on points - 2 degrees of freedom. With
/// `inverse_variance` the weights are 1/var(y_i) and the residual scale is
/// not allowed below 1, so the interval never undercuts the sampling error.
inline SlopeFit slope_fit(const std::vector<double>& x, const std::vector<double>& y, std::vector<double> w = {},
                          double level = 0.95, bool inverse_variance = false) {
  require(x.size() == y.size(), "slope fit needs matching x and y");
  require(x.size() >= 3, "slope fit needs at least 3 usable points");
  if (w.empty()) w.assign(x.size(), 1.0);
  require(w.size() == x.size(), "slope fit weights have the wrong length");
  double W = 0, mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    require(w[i] > 0.0 && std::isfinite(w[i]) && std::isfinite(y[i]), "slope fit needs finite data and positive weights");
    W += w[i];
    mx += w[i] * x[i];
    my += w[i] * y[i];
  }
  mx /= W;
  my /= W;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += w[i] * (x[i] - mx) * (x[i] - mx);
    sxy += w[i] * (x[i] - mx) * (y[i] - my);
  }
  require(sxx > 0.0, "slope fit needs at least two distinct x values");
  SlopeFit f{};
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double rss = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - f.intercept - f.slope * x[i];
    rss += w[i] * r * r;
  }
  const double dof = static_cast<double>(x.size()) - 2.0;
  const double s2 = inverse_variance ? std::max(rss / dof, 1.0) : rss / dof;
  f.residual_sd = std::sqrt(s2);
  f.se = std::sqrt(s2 / sxx);
  f.half_width = t_quantile(0.5 + 0.5 * level, dof) * f.se;
  f.points = x.size();
  f.level = level;
  return f;
}

}  // namespace zipflow::stats
