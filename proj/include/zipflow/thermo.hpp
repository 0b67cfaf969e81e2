#pragma once

// Transfer matrices, pressure, Markov equilibrium measures, entropy, the
// pressure curve Q(t) and its Legendre transform, and exact deviation
// probabilities on finite full shifts.
//
// A Markov measure with memory D lives on states = words of length D.
// From state u the next symbol a leads to the word u.a (length D+1) and the
// state formed by its last D symbols. A potential of depth d <= D+1 is
// evaluated on the trailing d symbols of u.a.
//
// Cylinders are one-sided: [w] = {x : x_0..x_{k-1} = w}.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "zipflow/core.hpp"
#include "zipflow/rng.hpp"
#include "zipflow/shift.hpp"

namespace zipflow {

inline constexpr double kPressureTolerance = 1e-12;
inline constexpr int kPowerIterationCap = 200000;
inline constexpr double kEnumerationBudgetNats = 24.0;

/// Ruelle matrix of a locally constant potential over words of length `memory`.
/// Entry (u, a) is the weight of the edge u -> u.a, stored as exp(psi - shift).
class TransferMatrix {
 public:
  TransferMatrix(const Observable& psi, int memory) : L_(psi.alphabet()), D_(memory) {
    require(memory >= psi.depth() - 1, "memory must be at least depth - 1");
    states_ = checked_pow(static_cast<std::uint64_t>(L_), static_cast<unsigned>(D_));
    const std::uint64_t words = states_ * static_cast<std::uint64_t>(L_);
    require(words <= (std::uint64_t{1} << 26), "transfer matrix is too large");
    const std::uint64_t tail = checked_pow(static_cast<std::uint64_t>(L_), static_cast<unsigned>(psi.depth()));
    shift_ = psi.max();
    log_w_.resize(words);
    w_.resize(words);
    for (std::uint64_t i = 0; i < words; ++i) {
      log_w_[i] = psi.at_index(i % tail);
      w_[i] = std::exp(log_w_[i] - shift_);
    }
  }

  int alphabet() const noexcept { return L_; }
  int memory() const noexcept { return D_; }
  std::size_t states() const noexcept { return states_; }
  std::size_t successor(std::size_t u, int a) const noexcept {
    return (u * static_cast<std::size_t>(L_) + static_cast<std::size_t>(a)) % states_;
  }
  /// exp(psi(u.a) - shift()).
  double weight(std::size_t u, int a) const noexcept { return w_[u * static_cast<std::size_t>(L_) + static_cast<std::size_t>(a)]; }
  double log_weight(std::size_t u, int a) const noexcept { return log_w_[u * static_cast<std::size_t>(L_) + static_cast<std::size_t>(a)]; }
  double shift() const noexcept { return shift_; }

  /// Dense form with the shift removed (small cases, tests).
  std::vector<std::vector<double>> dense() const {
    std::vector<std::vector<double>> m(states_, std::vector<double>(states_, 0.0));
    for (std::size_t u = 0; u < states_; ++u)
      for (int a = 0; a < L_; ++a) m[u][successor(u, a)] += std::exp(log_weight(u, a));
    return m;
  }

  // y = M v and y = M^T v (shifted weights).
  void right(const std::vector<double>& v, std::vector<double>& y) const {
    for (std::size_t u = 0; u < states_; ++u) {
      double s = 0.0;
      for (int a = 0; a < L_; ++a) s += weight(u, a) * v[successor(u, a)];
      y[u] = s;
    }
  }
  void left(const std::vector<double>& v, std::vector<double>& y) const {
    std::fill(y.begin(), y.end(), 0.0);
    for (std::size_t u = 0; u < states_; ++u)
      for (int a = 0; a < L_; ++a) y[successor(u, a)] += v[u] * weight(u, a);
  }

 private:
  int L_;
  int D_;
  std::size_t states_;
  double shift_;
  std::vector<double> log_w_, w_;
};

inline TransferMatrix transfer_matrix(const Observable& psi, std::optional<int> memory = std::nullopt) {
  return TransferMatrix(psi, memory.value_or(psi.depth() - 1));
}

struct PerronData {
  double log_rho;  // pressure
  std::vector<double> right, left;
  int iterations;
};

namespace detail {

// Power iteration from the all-ones vector; stops once the Collatz-Wielandt
// bracket min (Mv)_i/v_i <= rho <= max (Mv)_i/v_i is tight to `tol`.
template <class Apply>
std::pair<double, std::vector<double>> perron_vector(std::size_t n, Apply apply, double tol, int cap, int& iters) {
  std::vector<double> v(n, 1.0), y(n);
  double lo = 0.0, hi = kInf;
  for (iters = 1; iters <= cap; ++iters) {
    apply(v, y);
    lo = kInf;
    hi = 0.0;
    double norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = y[i] / v[i];
      lo = std::min(lo, r);
      hi = std::max(hi, r);
      norm = std::max(norm, y[i]);
    }
    for (std::size_t i = 0; i < n; ++i) v[i] = y[i] / norm;
    if (hi - lo <= tol * hi) return {std::sqrt(lo * hi), v};
  }
  throw ConvergenceError("power iteration did not converge", (hi - lo) / hi);
}

}  // namespace detail

inline PerronData perron(const TransferMatrix& M, double tol = kPressureTolerance, int cap = kPowerIterationCap) {
  PerronData out;
  int it_r = 0, it_l = 0;
  auto [rho, r] = detail::perron_vector(M.states(), [&](const auto& v, auto& y) { M.right(v, y); }, tol, cap, it_r);
  auto [rho_l, l] = detail::perron_vector(M.states(), [&](const auto& v, auto& y) { M.left(v, y); }, tol, cap, it_l);
  (void)rho_l;
  out.log_rho = std::log(rho) + M.shift();
  out.right = std::move(r);
  out.left = std::move(l);
  out.iterations = std::max(it_r, it_l);
  return out;
}

/// log of the Perron eigenvalue of the transfer matrix.
inline double pressure(const Observable& psi, double tol = kPressureTolerance) {
  const TransferMatrix M = transfer_matrix(psi);
  int iters = 0;
  const auto res = detail::perron_vector(M.states(), [&](const auto& v, auto& y) { M.right(v, y); }, tol, kPowerIterationCap, iters);
  return std::log(res.first) + M.shift();
}

/// The potential P - psi.
inline Observable hat_potential(const Observable& psi, double P) { return (psi * -1.0).plus(P); }

/// Stationary Markov measure on the full shift with memory D.
class MarkovMeasure {
 public:
  MarkovMeasure() = default;
  MarkovMeasure(int alphabet, int memory, std::vector<double> transition, std::vector<double> stationary)
      : L_(alphabet), D_(memory), P_(std::move(transition)), pi_(std::move(stationary)) {
    states_ = checked_pow(static_cast<std::uint64_t>(L_), static_cast<unsigned>(D_));
    require(P_.size() == states_ * static_cast<std::size_t>(L_), "transition table has the wrong size");
    require(pi_.size() == states_, "stationary vector has the wrong size");
    build_cdf();
  }

  int alphabet() const noexcept { return L_; }
  int memory() const noexcept { return D_; }
  std::size_t states() const noexcept { return states_; }
  std::size_t successor(std::size_t u, int a) const noexcept {
    return (u * static_cast<std::size_t>(L_) + static_cast<std::size_t>(a)) % states_;
  }
  /// Probability of next symbol a from state u.
  double transition(std::size_t u, int a) const noexcept { return P_[u * static_cast<std::size_t>(L_) + static_cast<std::size_t>(a)]; }
  const std::vector<double>& stationary() const noexcept { return pi_; }
  const std::vector<double>& transitions() const noexcept { return P_; }

  /// Largest deviation of a row sum from 1 and of pi P from pi.
  std::pair<double, double> consistency() const {
    double rows = 0.0;
    std::vector<double> next(states_, 0.0);
    for (std::size_t u = 0; u < states_; ++u) {
      double s = 0.0;
      for (int a = 0; a < L_; ++a) {
        s += transition(u, a);
        next[successor(u, a)] += pi_[u] * transition(u, a);
      }
      rows = std::max(rows, std::abs(s - 1.0));
    }
    double stat = 0.0;
    for (std::size_t u = 0; u < states_; ++u) stat = std::max(stat, std::abs(next[u] - pi_[u]));
    return {rows, stat};
  }

  /// mu([w]) for a one-sided word w.
  double cylinder_mass(std::span<const Symbol> w) const {
    const auto D = static_cast<std::size_t>(D_);
    if (w.size() < D) {
      // Marginal: sum over states with prefix w.
      const std::uint64_t block = checked_pow(static_cast<std::uint64_t>(L_), static_cast<unsigned>(D - w.size()));
      const std::uint64_t start = word_to_index(w, L_) * block;
      double s = 0.0;
      for (std::uint64_t u = start; u < start + block; ++u) s += pi_[u];
      return s;
    }
    std::size_t u = static_cast<std::size_t>(word_to_index(w.first(D), L_));
    double m = pi_[u];
    for (std::size_t i = D; i < w.size(); ++i) {
      m *= transition(u, w[i]);
      u = successor(u, w[i]);
    }
    return m;
  }

  /// Entropy rate -sum pi(u) P(u,a) log P(u,a).
  double entropy() const {
    CompensatedSum s;
    for (std::size_t u = 0; u < states_; ++u)
      for (int a = 0; a < L_; ++a) {
        const double p = transition(u, a);
        if (p > 0.0) s.add(-pi_[u] * p * std::log(p));
      }
    return s.value();
  }

  /// Exact expectation of a locally constant observable.
  double integrate(const Observable& phi) const {
    require(phi.alphabet() == L_, "observable and measure alphabets differ");
    if (phi.depth() <= D_ + 1) {
      // Shift invariance: read phi on the trailing symbols of each edge.
      const std::uint64_t tail = phi.patterns();
      CompensatedSum s;
      for (std::size_t u = 0; u < states_; ++u)
        for (int a = 0; a < L_; ++a)
          s.add(pi_[u] * transition(u, a) * phi.at_index((u * static_cast<std::size_t>(L_) + static_cast<std::size_t>(a)) % tail));
      return s.value();
    }
    require(phi.patterns() <= (std::uint64_t{1} << 24), "observable depth exceeds the integration budget");
    CompensatedSum s;
    for (std::uint64_t i = 0; i < phi.patterns(); ++i) {
      const Word w = index_to_word(i, L_, phi.depth());
      s.add(cylinder_mass(w) * phi.at_index(i));
    }
    return s.value();
  }

  /// Draws the first `len` symbols of a mu-typical point.
  void sample_word(RandomStream& rng, Word& out, std::size_t len) const {
    out.resize(len);
    const auto D = static_cast<std::size_t>(D_);
    std::size_t u = rng.pick(pi_cdf_);
    const Word head = index_to_word(u, L_, D_);
    for (std::size_t i = 0; i < std::min(D, len); ++i) out[i] = head[i];
    for (std::size_t i = D; i < len; ++i) {
      const auto a = static_cast<int>(rng.pick(std::span<const double>(row_cdf_.data() + u * static_cast<std::size_t>(L_), static_cast<std::size_t>(L_))));
      out[i] = static_cast<Symbol>(a);
      u = successor(u, a);
    }
  }

  /// Next symbol from state u.
  int step(RandomStream& rng, std::size_t u) const {
    return static_cast<int>(rng.pick(std::span<const double>(row_cdf_.data() + u * static_cast<std::size_t>(L_), static_cast<std::size_t>(L_))));
  }
  std::size_t draw_state(RandomStream& rng) const { return rng.pick(pi_cdf_); }

 private:
  void build_cdf() {
    pi_cdf_.resize(states_);
    double acc = 0.0;
    for (std::size_t u = 0; u < states_; ++u) pi_cdf_[u] = acc += pi_[u];
    row_cdf_.resize(P_.size());
    for (std::size_t u = 0; u < states_; ++u) {
      double r = 0.0;
      for (int a = 0; a < L_; ++a) row_cdf_[u * static_cast<std::size_t>(L_) + static_cast<std::size_t>(a)] = r += transition(u, a);
    }
  }

  int L_ = 0;
  int D_ = 0;
  std::size_t states_ = 0;
  std::vector<double> P_, pi_;
  std::vector<double> pi_cdf_, row_cdf_;
};

/// Stationary vector of a Markov chain given by its transition table.
inline std::vector<double> stationary_of(int alphabet, int memory, const std::vector<double>& P) {
  const std::size_t n = checked_pow(static_cast<std::uint64_t>(alphabet), static_cast<unsigned>(memory));
  std::vector<double> pi(n, 1.0 / static_cast<double>(n)), next(n);
  for (int it = 0; it < kPowerIterationCap; ++it) {
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t u = 0; u < n; ++u)
      for (int a = 0; a < alphabet; ++a)
        next[(u * static_cast<std::size_t>(alphabet) + static_cast<std::size_t>(a)) % n] += pi[u] * P[u * static_cast<std::size_t>(alphabet) + static_cast<std::size_t>(a)];
    double diff = 0.0;
    for (std::size_t u = 0; u < n; ++u) diff = std::max(diff, std::abs(next[u] - pi[u]));
    pi.swap(next);
    if (diff < 1e-15) return pi;
  }
  throw ConvergenceError("stationary distribution did not converge", 0.0);
}

/// Random Markov measure with positive transitions (Dirichlet(1) rows).
inline MarkovMeasure random_markov_measure(int alphabet, int memory, RandomStream& rng) {
  const std::size_t n = checked_pow(static_cast<std::uint64_t>(alphabet), static_cast<unsigned>(memory));
  std::vector<double> P(n * static_cast<std::size_t>(alphabet));
  for (std::size_t u = 0; u < n; ++u) {
    double s = 0.0;
    for (int a = 0; a < alphabet; ++a) s += P[u * static_cast<std::size_t>(alphabet) + static_cast<std::size_t>(a)] = rng.exponential();
    for (int a = 0; a < alphabet; ++a) P[u * static_cast<std::size_t>(alphabet) + static_cast<std::size_t>(a)] /= s;
  }
  auto pi = stationary_of(alphabet, memory, P);
  return MarkovMeasure(alphabet, memory, std::move(P), std::move(pi));
}

class MarkovGibbsMeasure : public MarkovMeasure {
 public:
  MarkovGibbsMeasure(MarkovMeasure m, Observable psi, double P, std::vector<double> right, std::vector<double> left)
      : MarkovMeasure(std::move(m)), psi_(std::move(psi)), P_(P), right_(std::move(right)), left_(std::move(left)) {}

  const Observable& potential() const noexcept { return psi_; }
  double pressure() const noexcept { return P_; }
  const std::vector<double>& right_vector() const noexcept { return right_; }
  const std::vector<double>& left_vector() const noexcept { return left_; }
  double gibbs_constant() const noexcept { return K_; }
  int gibbs_checked_length() const noexcept { return K_len_; }

  /// K = max over words y of length k + depth - 1, k <= n_check, of
  /// max(q, 1/q) with q = mu([y_0..y_{k-1}]) / exp(-P k + S_k psi(y)).
  double compute_gibbs_constant(int n_check) {
    const int L = alphabet(), d = psi_.depth();
    require(n_check >= 0, "n_check must be nonnegative");
    const double nats = (n_check + d - 1) * std::log(static_cast<double>(L));
    if (nats > kEnumerationBudgetNats + 1.0) throw ResourceError("Gibbs scan exceeds the enumeration budget");
    double K = 1.0;
    Word w;
    // Depth-first over words; S_k psi needs k + d - 1 symbols.
    std::vector<double> sums;  // S_k psi along the current word, k = 0..
    auto rec = [&](auto&& self, int len) -> void {
      const int k = len - (d - 1);
      if (k >= 1) {
        const double mass = cylinder_mass(std::span<const Symbol>(w.data(), static_cast<std::size_t>(k)));
        const double q = std::log(mass) - (-P_ * k + sums[static_cast<std::size_t>(k)]);
        K = std::max(K, std::exp(std::abs(q)));
      }
      if (k >= n_check) return;
      for (int a = 0; a < L; ++a) {
        w.push_back(static_cast<Symbol>(a));
        const int nk = static_cast<int>(w.size()) - (d - 1);
        bool pushed = false;
        if (nk >= 1) {
          sums.push_back(sums.back() + psi_(std::span<const Symbol>(w.data() + nk - 1, static_cast<std::size_t>(d))));
          pushed = true;
        }
        self(self, len + 1);
        if (pushed) sums.pop_back();
        w.pop_back();
      }
    };
    sums.push_back(0.0);
    rec(rec, 0);
    K_ = K;
    K_len_ = n_check;
    return K;
  }

 private:
  Observable psi_;
  double P_;
  std::vector<double> right_, left_;
  double K_ = kInf;
  int K_len_ = -1;
};

/// Equilibrium state of psi as a Markov measure with memory max(depth-1, memory).
inline MarkovGibbsMeasure equilibrium_measure(const Observable& psi, int n_check = 8, std::optional<int> memory = std::nullopt) {
  const TransferMatrix M = transfer_matrix(psi, memory);
  PerronData pd = perron(M);
  const std::size_t n = M.states();
  const int L = M.alphabet();
  const double rho = std::exp(pd.log_rho - M.shift());
  std::vector<double> P(n * static_cast<std::size_t>(L));
  for (std::size_t u = 0; u < n; ++u) {
    double s = 0.0;
    for (int a = 0; a < L; ++a) s += P[u * static_cast<std::size_t>(L) + static_cast<std::size_t>(a)] = M.weight(u, a) * pd.right[M.successor(u, a)] / (rho * pd.right[u]);
    // Remove the residual of the eigen-solve so rows are stochastic to rounding.
    for (int a = 0; a < L; ++a) P[u * static_cast<std::size_t>(L) + static_cast<std::size_t>(a)] /= s;
  }
  std::vector<double> pi(n);
  double z = 0.0;
  for (std::size_t u = 0; u < n; ++u) z += pi[u] = pd.left[u] * pd.right[u];
  for (double& p : pi) p /= z;
  MarkovGibbsMeasure mu(MarkovMeasure(L, M.memory(), std::move(P), std::move(pi)), psi, pd.log_rho, std::move(pd.right), std::move(pd.left));
  if (n_check > 0) {
    const double nats = (n_check + psi.depth() - 1) * std::log(static_cast<double>(L));
    const int usable = nats > kEnumerationBudgetNats
                           ? std::max(1, static_cast<int>(kEnumerationBudgetNats / std::log(static_cast<double>(L))) - psi.depth() + 1)
                           : n_check;
    mu.compute_gibbs_constant(usable);
  }
  return mu;
}

inline double entropy(const MarkovMeasure& nu) { return nu.entropy(); }
inline double integrate(const MarkovMeasure& nu, const Observable& phi) { return nu.integrate(phi); }

/// Q(t) = P(psi + t phi) - P(psi) on a grid.
inline std::vector<double> pressure_curve(const Observable& psi, const Observable& phi, std::span<const double> t_grid) {
  const double P0 = pressure(psi);
  std::vector<double> q;
  q.reserve(t_grid.size());
  for (double t : t_grid) q.push_back(t == 0.0 ? 0.0 : pressure(psi + phi * t) - P0);
  return q;
}

/// Q(t) and Q'(t) = nu_t(phi) from the equilibrium state of psi + t phi.
inline std::pair<double, double> pressure_and_slope(const Observable& psi, const Observable& phi, double t) {
  const Observable pot = psi + phi * t;
  const MarkovGibbsMeasure nu = equilibrium_measure(pot, 0);
  return {nu.pressure(), nu.integrate(phi)};
}

/// Minimum and maximum cycle mean of phi on the de Bruijn graph of its
/// depth: the closure of {nu(phi) : nu invariant}.
inline std::pair<double, double> observable_range(const Observable& phi) {
  const int L = phi.alphabet(), D = std::max(phi.depth() - 1, 0);
  const std::size_t n = checked_pow(static_cast<std::uint64_t>(L), static_cast<unsigned>(D));
  require(n <= 4096, "observable depth too large for the cycle-mean range");
  if (n == 1) return {phi.min(), phi.max()};
  auto karp = [&](double sign) {
    // d[k][v]: best weight of a k-edge walk ending at v, from any start.
    std::vector<std::vector<double>> dk(n + 1, std::vector<double>(n, -kInf));
    std::fill(dk[0].begin(), dk[0].end(), 0.0);
    for (std::size_t k = 1; k <= n; ++k)
      for (std::size_t u = 0; u < n; ++u) {
        if (dk[k - 1][u] == -kInf) continue;
        for (int a = 0; a < L; ++a) {
          const std::size_t word = u * static_cast<std::size_t>(L) + static_cast<std::size_t>(a);
          const std::size_t v = word % n;
          dk[k][v] = std::max(dk[k][v], dk[k - 1][u] + sign * phi.at_index(word));
        }
      }
    double best = -kInf;
    for (std::size_t v = 0; v < n; ++v) {
      if (dk[n][v] == -kInf) continue;
      double worst = kInf;
      for (std::size_t k = 0; k < n; ++k)
        if (dk[k][v] != -kInf) worst = std::min(worst, (dk[n][v] - dk[k][v]) / static_cast<double>(n - k));
      best = std::max(best, worst);
    }
    return sign * best;
  };
  return {karp(-1.0), karp(1.0)};
}

enum class RateStatus { interior, boundary, outside };

struct RateValue {
  double value;       // I(s), +inf outside the range
  double t_star;      // maximizing t (inf at the boundary)
  RateStatus status;
  std::string diagnostic;
};

/// I(s) = sup_t (t s - Q(t)), Q(t) = P(psi + t phi) - P(psi).
inline RateValue rate_function(const Observable& psi, const Observable& phi, double s, double tol = 1e-10) {
  const auto [lo, hi] = observable_range(phi);
  const double scale = std::max(1.0, std::max(std::abs(lo), std::abs(hi)));
  const double edge = 1e-12 * scale;
  if (s > hi + edge || s < lo - edge)
    return {kInf, NAN, RateStatus::outside, "s lies outside the range of nu(phi)"};
  const double P0 = pressure(psi);
  auto g = [&](double t) { return t * s - (pressure(psi + phi * t) - P0); };
  if (hi - lo <= edge) return {0.0, 0.0, RateStatus::interior, "phi has a single cycle mean"};
  if (s >= hi - edge || s <= lo + edge) {
    // The supremum is the t -> +-inf limit; g is monotone there.
    const double dir = s >= hi - edge ? 1.0 : -1.0;
    double prev = g(0.0), t = 1.0, cur = prev;
    for (int i = 0; i < 60; ++i, t *= 2.0) {
      cur = g(dir * t);
      if (std::abs(cur - prev) <= 1e-13 * std::max(1.0, std::abs(cur))) break;
      prev = cur;
    }
    return {std::max(cur, 0.0), dir * kInf, RateStatus::boundary, "s is an endpoint of the range"};
  }
  // Bracket the root of Q'(t) = s, then golden-section on the concave g.
  auto slope = [&](double t) { return pressure_and_slope(psi, phi, t).second; };
  const double m0 = slope(0.0);
  double a = 0.0, b = 0.0;
  if (s > m0) {
    b = 1.0;
    while (slope(b) < s) {
      a = b;
      b *= 2.0;
      if (b > 1e8) throw ConvergenceError("rate function bracket diverged", b);
    }
  } else if (s < m0) {
    a = -1.0;
    while (slope(a) > s) {
      b = a;
      a *= 2.0;
      if (a < -1e8) throw ConvergenceError("rate function bracket diverged", a);
    }
  } else {
    return {0.0, 0.0, RateStatus::interior, ""};
  }
  const double phi_g = 0.5 * (std::sqrt(5.0) - 1.0);
  double x1 = b - phi_g * (b - a), x2 = a + phi_g * (b - a);
  double f1 = g(x1), f2 = g(x2);
  while (b - a > tol * std::max(1.0, std::abs(a) + std::abs(b))) {
    if (f1 < f2) {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + phi_g * (b - a);
      f2 = g(x2);
    } else {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - phi_g * (b - a);
      f1 = g(x1);
    }
  }
  const double t = 0.5 * (a + b);
  return {std::max(g(t), 0.0), t, RateStatus::interior, ""};
}

struct DeviationBound {
  double value;          // sup{h + nu(psi) - P : |nu(phi - mean)| >= eps}
  double value_strict;   // same with > eps
  double mean;           // mu(phi), removed before evaluating
  double rate_plus;      // I(eps)
  double rate_minus;     // I(-eps)
  bool degenerate;       // phi - mean is cohomologous to zero
  std::string diagnostic;
};

/// Variational deviation bound for the equilibrium state of psi.
inline DeviationBound deviation_bound(const Observable& psi, const Observable& phi, double eps) {
  require(eps >= 0.0, "epsilon must be nonnegative");
  const MarkovGibbsMeasure mu = equilibrium_measure(psi, 0, std::max(psi.depth(), phi.depth()) - 1);
  const double mean = mu.integrate(phi);
  const Observable centered = phi.plus(-mean);
  DeviationBound out{0.0, 0.0, mean, 0.0, 0.0, false, ""};
  if (cohomologous_to_constant(centered)) {
    out.degenerate = true;
    out.diagnostic = "zero-variance: phi is cohomologous to a constant";
    // The deviation set is eventually empty; 0 is reported as the bound.
    return out;
  }
  if (eps == 0.0) {
    out.value = 0.0;
    out.value_strict = 0.0;  // any nu with nu(phi) != 0 approaches 0
    return out;
  }
  const auto [lo, hi] = observable_range(centered);
  const RateValue ip = rate_function(psi, centered, eps);
  const RateValue im = rate_function(psi, centered, -eps);
  out.rate_plus = ip.value;
  out.rate_minus = im.value;
  out.value = -std::min(ip.value, im.value);
  const double edge = 1e-12 * std::max(1.0, std::max(std::abs(lo), std::abs(hi)));
  const double sp = eps < hi - edge ? ip.value : kInf;
  const double sm = -eps > lo + edge ? im.value : kInf;
  out.value_strict = -std::min(sp, sm);
  if (!std::isfinite(out.value)) out.diagnostic = "empty deviation set";
  return out;
}

struct DeviationProbability {
  double probability;
  std::uint64_t hits = 0;   // counting mode only
  std::uint64_t total = 0;  // counting mode only
  bool counted = false;
};

namespace detail {

inline double deviation_slack(std::size_t n, double eps) {
  return 1e-9 * std::max(1.0, static_cast<double>(n) * eps);
}

}  // namespace detail

/// mu{|S_n phi| >= n eps} (or > with strict) by enumerating one-sided words of
/// length n + depth - 1. With `count` the uniform-weight hit count is returned
/// exactly as hits / L^len, which is the probability under uniform Bernoulli.
inline DeviationProbability exact_deviation_probability(const MarkovMeasure& mu, const Observable& phi, std::size_t n,
                                                        double eps, bool strict = false, bool count = false,
                                                        double budget_nats = kEnumerationBudgetNats) {
  require(phi.alphabet() == mu.alphabet(), "observable and measure alphabets differ");
  require(eps >= 0.0, "epsilon must be nonnegative");
  const int L = mu.alphabet(), d = phi.depth();
  const std::size_t len = n + static_cast<std::size_t>(d - 1);
  if (static_cast<double>(n) * std::log(static_cast<double>(L)) > budget_nats ||
      static_cast<double>(len) * std::log(static_cast<double>(L)) > budget_nats + 8.0)
    throw ResourceError("exact enumeration exceeds the budget; use Monte Carlo");
  const double thr = static_cast<double>(n) * eps;
  const double slack = detail::deviation_slack(n, eps);
  auto hit = [&](double s) { return strict ? std::abs(s) > thr + slack : std::abs(s) >= thr - slack; };
  CompensatedSum mass;
  std::uint64_t hits = 0;
  Word w(len);
  std::vector<double> sums(len + 1, 0.0);
  // Depth-first with running Birkhoff sums; masses via the chain.
  auto rec = [&](auto&& self, std::size_t pos) -> void {
    if (pos == len) {
      if (hit(sums[pos])) {
        ++hits;
        if (!count) mass.add(mu.cylinder_mass(w));
      }
      return;
    }
    for (int a = 0; a < L; ++a) {
      w[pos] = static_cast<Symbol>(a);
      const std::size_t end = pos + 1;
      sums[end] = sums[pos];
      if (end >= static_cast<std::size_t>(d) && end - static_cast<std::size_t>(d) < n)
        sums[end] += phi(std::span<const Symbol>(w.data() + end - static_cast<std::size_t>(d), static_cast<std::size_t>(d)));
      self(self, end);
    }
  };
  if (n == 0) {
    const bool h = hit(0.0);
    return {h ? 1.0 : 0.0, h ? 1u : 0u, 1, count};
  }
  rec(rec, 0);
  DeviationProbability out;
  if (count) {
    out.counted = true;
    out.hits = hits;
    out.total = checked_pow(static_cast<std::uint64_t>(L), static_cast<unsigned>(len));
    out.probability = static_cast<double>(hits) / static_cast<double>(out.total);
  } else {
    out.probability = mass.value();
    out.hits = hits;
  }
  return out;
}

}  // namespace zipflow
