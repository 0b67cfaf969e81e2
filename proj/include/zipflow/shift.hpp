#pragma once

// Full shift on L symbols: configurations, locally constant observables,
// Birkhoff sums, variations, periodic orbits and coboundary tests.
//
// An observable of depth d reads coordinates 0..d-1 of a configuration.
// Its table is indexed by sum_j x_j L^{d-1-j} (x_0 most significant).

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "zipflow/core.hpp"
#include "zipflow/rng.hpp"

namespace zipflow {

inline constexpr double kPeriodicSumTolerance = 1e-10;
inline constexpr std::uint64_t kDefaultPatternBudget = std::uint64_t{1} << 24;

class Observable {
 public:
  Observable() = default;

  Observable(int alphabet, int depth, std::vector<double> table)
      : L_(alphabet), d_(depth), table_(std::move(table)) {
    require(L_ >= 1 && L_ <= 256, "alphabet size must be in 1..256");
    require(d_ >= 1, "observable depth must be positive");
    const std::uint64_t n = checked_pow(static_cast<std::uint64_t>(L_), static_cast<unsigned>(d_));
    require(table_.size() == n, "observable table has " + std::to_string(table_.size()) +
                                    " entries, expected L^d = " + std::to_string(n));
    for (double v : table_) require(std::isfinite(v), "observable table entries must be finite");
  }

  static Observable constant(int alphabet, double c) {
    return Observable(alphabet, 1, std::vector<double>(static_cast<std::size_t>(alphabet), c));
  }

  /// Table filled from f(word) over all words of length `depth`.
  template <class F>
  static Observable tabulate(int alphabet, int depth, F&& f) {
    const std::uint64_t n = checked_pow(static_cast<std::uint64_t>(alphabet), static_cast<unsigned>(depth));
    std::vector<double> t(n);
    for (std::uint64_t i = 0; i < n; ++i) t[i] = f(index_to_word(i, alphabet, depth));
    return Observable(alphabet, depth, std::move(t));
  }

  int alphabet() const noexcept { return L_; }
  int depth() const noexcept { return d_; }
  const std::vector<double>& table() const noexcept { return table_; }
  std::size_t patterns() const noexcept { return table_.size(); }

  double at_index(std::uint64_t i) const { return table_[i]; }

  /// Value on a word whose first `depth` symbols are read.
  double operator()(std::span<const Symbol> w) const {
    std::uint64_t idx = 0;
    for (int j = 0; j < d_; ++j) idx = idx * static_cast<std::uint64_t>(L_) + w[static_cast<std::size_t>(j)];
    return table_[idx];
  }

  double max() const { return *std::max_element(table_.begin(), table_.end()); }
  double min() const { return *std::min_element(table_.begin(), table_.end()); }
  double sup_abs() const { return std::max(std::abs(max()), std::abs(min())); }

  /// Same function read at a larger depth.
  Observable lifted(int depth) const {
    require(depth >= d_, "cannot lift to a smaller depth");
    if (depth == d_) return *this;
    const std::uint64_t factor = checked_pow(static_cast<std::uint64_t>(L_), static_cast<unsigned>(depth - d_));
    std::vector<double> t(table_.size() * factor);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = table_[i / factor];
    return Observable(L_, depth, std::move(t));
  }

  /// phi o sigma, depth d+1.
  Observable composed_with_shift() const {
    const std::size_t n = table_.size();
    std::vector<double> t(n * static_cast<std::size_t>(L_));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = table_[i % n];
    return Observable(L_, d_ + 1, std::move(t));
  }

  Observable operator+(const Observable& o) const { return combine(o, [](double a, double b) { return a + b; }); }
  Observable operator-(const Observable& o) const { return combine(o, [](double a, double b) { return a - b; }); }
  Observable operator*(double s) const {
    Observable r = *this;
    for (double& v : r.table_) v *= s;
    return r;
  }
  Observable plus(double c) const {
    Observable r = *this;
    for (double& v : r.table_) v += c;
    return r;
  }

 private:
  template <class Op>
  Observable combine(const Observable& o, Op op) const {
    require(L_ == o.L_, "observables live on different alphabets");
    const int d = std::max(d_, o.d_);
    Observable a = lifted(d), b = o.lifted(d);
    for (std::size_t i = 0; i < a.table_.size(); ++i) a.table_[i] = op(a.table_[i], b.table_[i]);
    return a;
  }

  int L_ = 0;
  int d_ = 0;
  std::vector<double> table_;
};

enum class Extension { periodic, none };

/// A two-sided sequence stored as a finite window. Coordinate i lives at
/// data[origin + i]; outside the window it repeats periodically or is undefined.
class Configuration {
 public:
  Configuration() = default;
  Configuration(int alphabet, Word data, std::ptrdiff_t origin = 0, Extension ext = Extension::periodic)
      : L_(alphabet), data_(std::move(data)), origin_(origin), ext_(ext) {
    require(!data_.empty(), "configuration window is empty");
    for (Symbol s : data_) require(s < L_, "configuration symbol out of alphabet range");
  }

  /// The periodic point ...www.www... with coordinate 0 at w[0].
  static Configuration periodic(int alphabet, Word w) { return Configuration(alphabet, std::move(w), 0, Extension::periodic); }

  int alphabet() const noexcept { return L_; }
  const Word& data() const noexcept { return data_; }
  std::ptrdiff_t origin() const noexcept { return origin_; }
  Extension extension() const noexcept { return ext_; }

  bool defined(std::ptrdiff_t i) const noexcept {
    if (ext_ == Extension::periodic) return true;
    const std::ptrdiff_t j = origin_ + i;
    return j >= 0 && j < static_cast<std::ptrdiff_t>(data_.size());
  }

  Symbol operator[](std::ptrdiff_t i) const {
    std::ptrdiff_t j = origin_ + i;
    const auto n = static_cast<std::ptrdiff_t>(data_.size());
    if (ext_ == Extension::periodic) {
      j %= n;
      if (j < 0) j += n;
    } else if (j < 0 || j >= n) {
      throw ValidationError("coordinate " + std::to_string(i) + " lies outside the configuration window");
    }
    return data_[static_cast<std::size_t>(j)];
  }

  /// sigma^k x.
  Configuration shifted(std::ptrdiff_t k = 1) const {
    Configuration y = *this;
    y.origin_ += k;
    if (ext_ == Extension::periodic) {
      const auto n = static_cast<std::ptrdiff_t>(data_.size());
      y.origin_ %= n;
      if (y.origin_ < 0) y.origin_ += n;
    }
    return y;
  }

  /// Coordinates start..start+len-1.
  Word read(std::ptrdiff_t start, int len) const {
    Word w(static_cast<std::size_t>(len));
    for (int j = 0; j < len; ++j) w[static_cast<std::size_t>(j)] = (*this)[start + j];
    return w;
  }

 private:
  int L_ = 0;
  Word data_;
  std::ptrdiff_t origin_ = 0;
  Extension ext_ = Extension::periodic;
};

/// y in [x]_n: y_i = x_i for |i| < n.
inline bool cylinder_contains(const Configuration& x, const Configuration& y, int n) {
  require(x.alphabet() == y.alphabet(), "configurations live on different alphabets");
  for (std::ptrdiff_t i = -(n - 1); i <= n - 1; ++i) {
    if (!x.defined(i) || !y.defined(i))
      throw ValidationError("cylinder depth " + std::to_string(n) + " exceeds the configuration window");
    if (x[i] != y[i]) return false;
  }
  return true;
}

inline double evaluate(const Observable& phi, const Configuration& x, std::ptrdiff_t offset = 0) {
  require(phi.alphabet() == x.alphabet(), "observable and configuration alphabets differ");
  std::uint64_t idx = 0;
  for (int j = 0; j < phi.depth(); ++j) idx = idx * static_cast<std::uint64_t>(phi.alphabet()) + x[offset + j];
  return phi.at_index(idx);
}

/// S_n phi(x) = sum_{i<n} phi(sigma^i x).
inline double birkhoff_sum(const Observable& phi, const Configuration& x, std::size_t n) {
  CompensatedSum s;
  for (std::size_t i = 0; i < n; ++i) s.add(evaluate(phi, x, static_cast<std::ptrdiff_t>(i)));
  return s.value();
}

/// S_n phi along the one-sided word w (requires |w| >= n + depth - 1).
inline double birkhoff_sum(const Observable& phi, std::span<const Symbol> w, std::size_t n) {
  require(w.size() + 1 >= n + static_cast<std::size_t>(phi.depth()), "word too short for the Birkhoff sum");
  CompensatedSum s;
  for (std::size_t i = 0; i < n; ++i) s.add(phi(w.subspan(i)));
  return s.value();
}

/// var_k(phi) = sup{|phi(x) - phi(y)| : y in [x]_k}, exact for tables.
/// Only coordinates 0..d-1 matter, so var_0 is the full spread, var_k for
/// 0 < k < d is the largest spread among patterns sharing their first k
/// symbols, and var_k = 0 for k >= d.
inline double variation(const Observable& phi, int k) {
  require(k >= 0, "variation order must be nonnegative");
  if (k >= phi.depth()) return 0.0;
  const std::uint64_t block = checked_pow(static_cast<std::uint64_t>(phi.alphabet()), static_cast<unsigned>(phi.depth() - k));
  const auto& t = phi.table();
  double out = 0.0;
  for (std::size_t start = 0; start < t.size(); start += block) {
    const auto [lo, hi] = std::minmax_element(t.begin() + static_cast<std::ptrdiff_t>(start),
                                              t.begin() + static_cast<std::ptrdiff_t>(start + block));
    out = std::max(out, *hi - *lo);
  }
  return out;
}

struct VariationSum {
  double partial;  // sum_{k=0}^{n-1} var_k
  double total;    // A_0 = sum_{k>=1} var_k
};

inline VariationSum same_coordinate_bound(const Observable& phi, int n) {
  require(n >= 0, "n must be nonnegative");
  CompensatedSum partial, total;
  for (int k = 0; k < std::max(n, phi.depth()); ++k) {
    const double v = variation(phi, k);
    if (k < n) partial.add(v);
    if (k >= 1) total.add(v);
  }
  return {partial.value(), total.value()};
}

/// Calls f(word) for every word of length p (each a period-p point).
template <class F>
void for_each_periodic_word(int p, int alphabet, F&& f, std::uint64_t budget = kDefaultPatternBudget) {
  require(p >= 1, "period must be positive");
  const std::uint64_t n = checked_pow(static_cast<std::uint64_t>(alphabet), static_cast<unsigned>(p));
  if (n > budget) throw ResourceError("L^p = " + std::to_string(n) + " exceeds the enumeration budget");
  Word w(static_cast<std::size_t>(p), 0);
  for (std::uint64_t i = 0; i < n; ++i) {
    f(static_cast<const Word&>(w));
    for (int j = p - 1; j >= 0; --j) {
      if (++w[static_cast<std::size_t>(j)] < alphabet) break;
      w[static_cast<std::size_t>(j)] = 0;
    }
  }
}

inline std::vector<Configuration> periodic_points(int p, int alphabet, std::uint64_t budget = kDefaultPatternBudget) {
  std::vector<Configuration> out;
  for_each_periodic_word(p, alphabet, [&](const Word& w) { out.push_back(Configuration::periodic(alphabet, w)); }, budget);
  return out;
}

/// S_p phi(z) for the period-p point generated by w.
inline double periodic_sum(const Observable& phi, const Word& w) {
  const auto p = w.size();
  const int d = phi.depth();
  const auto L = static_cast<std::uint64_t>(phi.alphabet());
  CompensatedSum s;
  for (std::size_t i = 0; i < p; ++i) {
    std::uint64_t idx = 0;
    for (int j = 0; j < d; ++j) idx = idx * L + w[(i + static_cast<std::size_t>(j)) % p];
    s.add(phi.at_index(idx));
  }
  return s.value();
}

struct PeriodicWitness {
  Word z;  // one period
  int period;
  double sum;
};

struct LivsicVerdict {
  bool coboundary;                     // all periodic sums vanished up to reached_period
  int reached_period;                  // last period fully checked
  bool partial;                        // enumeration stopped by the budget
  std::optional<PeriodicWitness> witness;
  double max_abs_sum;                  // over all checked points
};

/// Periodic-orbit test for phi ~ 0. Periods are checked in increasing order;
/// the witness is the largest |S_p phi| at the first period with a nonzero sum
/// (ties keep the positive sum, then the earlier word).
inline LivsicVerdict livsic_test(const Observable& phi, int p_max, double tol = kPeriodicSumTolerance,
                                 std::uint64_t budget = kDefaultPatternBudget) {
  require(p_max >= 1, "p_max must be positive");
  LivsicVerdict v{true, 0, false, std::nullopt, 0.0};
  for (int p = 1; p <= p_max; ++p) {
    try {
      for_each_periodic_word(p, phi.alphabet(), [&](const Word& w) {
        const double s = periodic_sum(phi, w);
        v.max_abs_sum = std::max(v.max_abs_sum, std::abs(s));
        if (std::abs(s) <= tol) return;
        if (!v.witness || v.witness->period == p) {
          if (!v.witness || std::abs(s) > std::abs(v.witness->sum) ||
              (std::abs(s) == std::abs(v.witness->sum) && s > 0 && v.witness->sum < 0))
            v.witness = PeriodicWitness{w, p, s};
        }
      }, budget);
    } catch (const ResourceError&) {
      v.partial = true;
      break;
    }
    v.reached_period = p;
    if (v.witness) {
      v.coboundary = false;
      break;
    }
  }
  return v;
}

/// Exact test for phi = g o sigma - g with g depending on d-1 coordinates:
/// integrate phi along the de Bruijn graph and check every edge.
/// Returns the largest edge inconsistency (0 for a coboundary up to rounding).
inline double coboundary_defect(const Observable& phi) {
  const int L = phi.alphabet(), d = phi.depth();
  if (d == 1) return phi.sup_abs();
  const std::uint64_t states = checked_pow(static_cast<std::uint64_t>(L), static_cast<unsigned>(d - 1));
  std::vector<double> g(states, 0.0);
  std::vector<bool> seen(states, false);
  std::vector<std::uint64_t> stack{0};
  seen[0] = true;
  double defect = 0.0;
  while (!stack.empty()) {
    const std::uint64_t u = stack.back();
    stack.pop_back();
    for (int a = 0; a < L; ++a) {
      const std::uint64_t word = u * static_cast<std::uint64_t>(L) + static_cast<std::uint64_t>(a);
      const std::uint64_t v = word % states;
      const double target = g[u] + phi.at_index(word);
      if (!seen[v]) {
        seen[v] = true;
        g[v] = target;
        stack.push_back(v);
      } else {
        defect = std::max(defect, std::abs(g[v] - target));
      }
    }
  }
  return defect;
}

/// True when phi - c is a coboundary for the constant c = phi(000...).
inline bool cohomologous_to_constant(const Observable& phi, double tol = kPeriodicSumTolerance) {
  return coboundary_defect(phi.plus(-phi.at_index(0))) <= tol * std::max(1.0, phi.sup_abs());
}

/// A function of a configuration that is only available by evaluation.
struct SampledObservable {
  int alphabet;
  std::function<double(const Configuration&)> f;
  int window = 64;  // half-width of the random windows used for sampling
};

struct HolderFit {
  double constant = 0.0;  // A (or C in log mode)
  double rate = 0.0;      // alpha in A e^{-alpha k}
  double base = 0.0;      // e^{-alpha}
  double residual = 0.0;  // rms residual of the log fit
  bool exact = false;     // computed from a table, not sampled
  bool decaying = false;  // false: "no exponential fit"
  std::vector<double> var; // var_k estimates, k = 0..k_max
};

namespace detail {

inline HolderFit fit_log_linear(std::vector<double> var, int k_min) {
  HolderFit fit;
  fit.var = std::move(var);
  std::vector<double> ks, ys;
  for (std::size_t k = static_cast<std::size_t>(k_min); k < fit.var.size(); ++k)
    if (fit.var[k] > 0.0) {
      ks.push_back(static_cast<double>(k));
      ys.push_back(std::log(fit.var[k]));
    }
  if (ks.size() < 2) {
    // Zero beyond the first entry: the modulus is trivially exponential.
    bool all_zero_after = true;
    for (std::size_t k = static_cast<std::size_t>(k_min) + 1; k < fit.var.size(); ++k) all_zero_after &= fit.var[k] == 0.0;
    fit.decaying = all_zero_after;
    fit.constant = ks.empty() ? 0.0 : std::exp(ys[0] + ks[0]);
    fit.rate = kInf;
    fit.base = 0.0;
    return fit;
  }
  const double n = static_cast<double>(ks.size());
  double mk = 0, my = 0;
  for (std::size_t i = 0; i < ks.size(); ++i) mk += ks[i] / n, my += ys[i] / n;
  double skk = 0, sky = 0;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    skk += (ks[i] - mk) * (ks[i] - mk);
    sky += (ks[i] - mk) * (ys[i] - my);
  }
  const double slope = sky / skk;
  const double icpt = my - slope * mk;
  double rss = 0;
  for (std::size_t i = 0; i < ks.size(); ++i) rss += std::pow(ys[i] - icpt - slope * ks[i], 2);
  fit.rate = -slope;
  fit.base = std::exp(slope);
  fit.residual = std::sqrt(rss / n);
  fit.decaying = slope < 0.0;
  // Smallest A with var_k <= A e^{-alpha k} at every fitted k.
  double worst = -kInf;
  for (std::size_t i = 0; i < ks.size(); ++i) worst = std::max(worst, ys[i] - slope * ks[i]);
  fit.constant = std::exp(worst);
  return fit;
}

// x and y agree on |i| < k; everything else in the window is independent.
inline std::pair<Configuration, Configuration> cylinder_pair(int alphabet, int half_width, int k, RandomStream& rng) {
  const auto n = static_cast<std::size_t>(2 * half_width + 1);
  Word a(n), b(n);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = static_cast<Symbol>(rng() % static_cast<std::uint32_t>(alphabet));
    const auto coord = static_cast<int>(i) - half_width;
    b[i] = std::abs(coord) < k ? a[i] : static_cast<Symbol>(rng() % static_cast<std::uint32_t>(alphabet));
  }
  return {Configuration(alphabet, std::move(a), half_width, Extension::none),
          Configuration(alphabet, std::move(b), half_width, Extension::none)};
}

}  // namespace detail

/// Exact fit of var_k = A e^{-alpha k} for a table (k = 1..d-1).
inline HolderFit holder_fit(const Observable& phi) {
  std::vector<double> var;
  for (int k = 0; k <= phi.depth(); ++k) var.push_back(variation(phi, k));
  HolderFit fit = detail::fit_log_linear(std::move(var), 1);
  fit.exact = true;
  return fit;
}

/// Sampled fit: var_k estimated as the largest |f(x) - f(y)| over `pairs`
/// random pairs sharing the cylinder [x]_k, k = 0..k_max.
inline HolderFit holder_fit(const SampledObservable& obs, int k_max, int pairs, RandomStream& rng) {
  require(k_max >= 2 && k_max < obs.window, "k_max must lie in [2, window)");
  std::vector<double> var(static_cast<std::size_t>(k_max) + 1, 0.0);
  for (int k = 0; k <= k_max; ++k)
    for (int s = 0; s < pairs; ++s) {
      auto [x, y] = detail::cylinder_pair(obs.alphabet, obs.window, k, rng);
      var[static_cast<std::size_t>(k)] = std::max(var[static_cast<std::size_t>(k)], std::abs(obs.f(x) - obs.f(y)));
    }
  return detail::fit_log_linear(std::move(var), 1);
}

/// log-Hoelder modulus of a positive function: fits
/// 1 - inf f(y)/f(x) over y in [x]_k against C e^{-alpha k}.
inline HolderFit log_holder_fit(const SampledObservable& obs, int k_max, int pairs, RandomStream& rng) {
  require(k_max >= 2 && k_max < obs.window, "k_max must lie in [2, window)");
  std::vector<double> defect(static_cast<std::size_t>(k_max) + 1, 0.0);
  for (int k = 0; k <= k_max; ++k)
    for (int s = 0; s < pairs; ++s) {
      auto [x, y] = detail::cylinder_pair(obs.alphabet, obs.window, k, rng);
      const double fx = obs.f(x), fy = obs.f(y);
      require(fx > 0.0 && fy > 0.0, "log-Hoelder fit needs a positive function");
      defect[static_cast<std::size_t>(k)] = std::max(defect[static_cast<std::size_t>(k)], 1.0 - std::min(fx / fy, fy / fx));
    }
  return detail::fit_log_linear(std::move(defect), 1);
}

inline HolderFit log_holder_fit(const Observable& phi) {
  require(phi.min() > 0.0, "log-Hoelder fit needs a positive function");
  std::vector<double> defect;
  const auto& t = phi.table();
  for (int k = 0; k <= phi.depth(); ++k) {
    if (k >= phi.depth()) {
      defect.push_back(0.0);
      continue;
    }
    const std::uint64_t block = checked_pow(static_cast<std::uint64_t>(phi.alphabet()), static_cast<unsigned>(phi.depth() - k));
    double worst = 0.0;
    for (std::size_t start = 0; start < t.size(); start += block) {
      const auto [lo, hi] = std::minmax_element(t.begin() + static_cast<std::ptrdiff_t>(start),
                                                t.begin() + static_cast<std::ptrdiff_t>(start + block));
      worst = std::max(worst, 1.0 - *lo / *hi);
    }
    defect.push_back(worst);
  }
  HolderFit fit = detail::fit_log_linear(std::move(defect), 1);
  fit.exact = true;
  return fit;
}

}  // namespace zipflow
