#pragma once

// Special flows over the shift: roofs, flow observables, lap numbers, the
// decomposition of time integrals into a base Birkhoff sum plus boundary
// terms, the compensated observable rho, sampling of the induced measure
// mu_r, and roof tail estimates.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "zipflow/core.hpp"
#include "zipflow/rng.hpp"
#include "zipflow/shift.hpp"
#include "zipflow/thermo.hpp"

namespace zipflow {

struct Roof {
  Observable r;
  double r0;

  Roof() = default;
  explicit Roof(Observable fn) : Roof(fn, fn.min()) {}
  Roof(Observable fn, double lower) : r(std::move(fn)), r0(lower) {
    require(r0 > 0.0 && std::isfinite(r0), "roof lower bound r0 must be positive");
    require(r.min() >= r0, "roof takes a value below its declared lower bound r0");
  }
  static Roof constant(int alphabet, double c) { return Roof(Observable::constant(alphabet, c)); }

  int depth() const noexcept { return r.depth(); }
  double operator()(std::span<const Symbol> w) const { return r(w); }
  double max() const { return r.max(); }
};

/// polynomial sum_j c_j t^j on [t0, t1).
struct FiberPiece {
  double t0 = 0.0;
  double t1 = kInf;
  std::vector<double> coeffs;

  double value(double t) const {
    double v = 0.0;
    for (std::size_t j = coeffs.size(); j-- > 0;) v = v * t + coeffs[j];
    return v;
  }
  /// integral over [a, b] intersected with [t0, t1).
  double integral(double a, double b) const {
    const double lo = std::max(a, t0), hi = std::min(b, t1);
    if (!(hi > lo)) return 0.0;
    auto prim = [&](double t) {
      double v = 0.0;
      for (std::size_t j = coeffs.size(); j-- > 0;) v = v * t + coeffs[j] / static_cast<double>(j + 1);
      return v * t;
    };
    return prim(hi) - prim(lo);
  }
  /// sup |p| on [t0, min(t1, horizon)].
  double sup_abs(double horizon) const {
    const double hi = std::min(t1, horizon);
    if (!(hi > t0)) return 0.0;
    double m = std::max(std::abs(value(t0)), std::abs(value(hi)));
    if (coeffs.size() <= 2) return m;
    if (coeffs.size() == 3 && coeffs[2] != 0.0) {
      const double v = -coeffs[1] / (2.0 * coeffs[2]);
      if (v > t0 && v < hi) m = std::max(m, std::abs(value(v)));
      return m;
    }
    for (int i = 1; i < 2048; ++i) m = std::max(m, std::abs(value(t0 + (hi - t0) * i / 2048.0)));
    return m;
  }
};

/// Observable on the suspension: phi(x, t) for 0 <= t < r(x), depending on
/// x_0..x_{depth-1}. Either a sum of fiber polynomials per base pattern or
/// an opaque callable integrated numerically.
class FlowObservable {
 public:
  using Callable = std::function<double(std::span<const Symbol>, double)>;

  FlowObservable() = default;
  FlowObservable(int alphabet, int depth, std::vector<std::vector<FiberPiece>> pieces)
      : L_(alphabet), d_(depth), pieces_(std::move(pieces)) {
    require(d_ >= 1, "flow observable depth must be positive");
    require(pieces_.size() == checked_pow(static_cast<std::uint64_t>(L_), static_cast<unsigned>(d_)),
            "flow observable needs one piece list per base pattern");
    for (const auto& list : pieces_)
      for (const auto& p : list) {
        require(p.t0 >= 0.0 && p.t1 > p.t0, "fiber piece needs 0 <= t0 < t1");
        for (double c : p.coeffs) require(std::isfinite(c), "fiber coefficients must be finite");
      }
  }
  FlowObservable(int alphabet, int depth, Callable f, double sup_bound)
      : L_(alphabet), d_(depth), callable_(std::move(f)), declared_sup_(sup_bound) {}

  /// phi(x, t) = g(x) for every t.
  static FlowObservable fiber_constant(const Observable& g) {
    std::vector<std::vector<FiberPiece>> p(g.patterns());
    for (std::size_t i = 0; i < p.size(); ++i) p[i].push_back({0.0, kInf, {g.at_index(i)}});
    return FlowObservable(g.alphabet(), g.depth(), std::move(p));
  }

  int alphabet() const noexcept { return L_; }
  int depth() const noexcept { return d_; }
  bool closed_form() const noexcept { return !callable_; }
  const std::vector<std::vector<FiberPiece>>& pieces() const noexcept { return pieces_; }

  std::size_t pattern(std::span<const Symbol> w) const {
    return static_cast<std::size_t>(word_to_index(w.first(static_cast<std::size_t>(d_)), L_));
  }

  double value(std::span<const Symbol> w, double t) const {
    if (callable_) return callable_(w, t);
    double v = 0.0;
    for (const auto& p : pieces_[pattern(w)])
      if (t >= p.t0 && t < p.t1) v += p.value(t);
    return v;
  }

  /// int_a^b phi(x, t) dt.
  double integral(std::span<const Symbol> w, double a, double b) const {
    if (b <= a) return a == b ? 0.0 : -integral(w, b, a);
    if (!callable_) {
      double s = 0.0;
      for (const auto& p : pieces_[pattern(w)]) s += p.integral(a, b);
      return s;
    }
    return adaptive_simpson([&](double t) { return callable_(w, t); }, a, b, 1e-12, 40);
  }

  /// sup over patterns and t in [0, horizon) of |phi|.
  double sup_abs(double horizon) const {
    if (callable_) return declared_sup_;
    double m = 0.0;
    for (const auto& list : pieces_) {
      // Pieces may overlap; bound the sum on each elementary interval.
      std::vector<double> cuts{0.0, horizon};
      for (const auto& p : list) {
        if (p.t0 < horizon) cuts.push_back(p.t0);
        if (p.t1 < horizon) cuts.push_back(p.t1);
      }
      std::sort(cuts.begin(), cuts.end());
      for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
        if (!(cuts[i + 1] > cuts[i])) continue;
        FiberPiece sum{cuts[i], cuts[i + 1], {}};
        for (const auto& p : list)
          if (p.t0 <= cuts[i] && p.t1 >= cuts[i + 1]) {
            if (sum.coeffs.size() < p.coeffs.size()) sum.coeffs.resize(p.coeffs.size(), 0.0);
            for (std::size_t j = 0; j < p.coeffs.size(); ++j) sum.coeffs[j] += p.coeffs[j];
          }
        m = std::max(m, sum.sup_abs(cuts[i + 1]));
      }
    }
    return m;
  }

  /// Largest time where some piece is nonzero (inf for unbounded pieces).
  double support_end() const {
    if (callable_) return kInf;
    double e = 0.0;
    for (const auto& list : pieces_)
      for (const auto& p : list) e = std::max(e, p.t1);
    return e;
  }

  /// phi - c on the whole fiber.
  FlowObservable minus_constant(double c) const {
    require(!callable_, "centering needs a closed-form flow observable");
    FlowObservable out = *this;
    for (auto& list : out.pieces_) list.push_back({0.0, kInf, {-c}});
    return out;
  }

  /// Fiber breakpoints inside [a, b) for quadrature.
  std::vector<double> breakpoints(std::span<const Symbol> w) const {
    std::vector<double> b;
    if (!callable_)
      for (const auto& p : pieces_[pattern(w)]) {
        b.push_back(p.t0);
        if (std::isfinite(p.t1)) b.push_back(p.t1);
      }
    return b;
  }

  template <class F>
  static double adaptive_simpson(F&& f, double a, double b, double tol, int depth) {
    auto simpson = [&](double lo, double hi, double flo, double fmid, double fhi) {
      return (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi);
    };
    auto rec = [&](auto&& self, double lo, double hi, double flo, double fmid, double fhi, double whole, double eps,
                   int lvl) -> double {
      const double mid = 0.5 * (lo + hi);
      const double lm = 0.5 * (lo + mid), rm = 0.5 * (mid + hi);
      const double flm = f(lm), frm = f(rm);
      const double left = simpson(lo, mid, flo, flm, fmid), right = simpson(mid, hi, fmid, frm, fhi);
      if (lvl <= 0) throw ConvergenceError("fiber quadrature did not converge", std::abs(left + right - whole));
      if (std::abs(left + right - whole) <= 15.0 * eps) return left + right + (left + right - whole) / 15.0;
      return self(self, lo, mid, flo, flm, fmid, left, eps / 2, lvl - 1) +
             self(self, mid, hi, fmid, frm, fhi, right, eps / 2, lvl - 1);
    };
    const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
    return rec(rec, a, b, fa, fm, fb, simpson(a, b, fa, fm, fb), tol, depth);
  }

 private:
  int L_ = 0;
  int d_ = 0;
  std::vector<std::vector<FiberPiece>> pieces_;
  Callable callable_;
  double declared_sup_ = 0.0;
};

/// Base depth needed to evaluate r, phi and phi_r together.
inline int joint_depth(const Roof& r, const FlowObservable& phi) { return std::max(r.depth(), phi.depth()); }

/// phi_r(x) = int_0^{r(x)} phi(x, t) dt on a word of length >= joint depth.
inline double phi_r(const FlowObservable& phi, std::span<const Symbol> w, const Roof& r) {
  return phi.integral(w, 0.0, r(w));
}

/// phi_r as a locally constant observable.
inline Observable phi_r_observable(const FlowObservable& phi, const Roof& r) {
  require(phi.alphabet() == r.r.alphabet(), "roof and observable alphabets differ");
  return Observable::tabulate(phi.alphabet(), joint_depth(r, phi), [&](const Word& w) { return phi_r(phi, w, r); });
}

struct SuspensionPoint {
  Configuration base;
  double s = 0.0;
};

namespace detail {

inline double roof_at(const Roof& r, const Configuration& x, std::ptrdiff_t i) {
  return evaluate(r.r, x, i);
}

inline Word window_at(const Configuration& x, std::ptrdiff_t i, int len) { return x.read(i, len); }

}  // namespace detail

/// n with S_n r(x) <= s + T < S_{n+1} r(x); also returns S_n r(x).
inline std::pair<std::size_t, double> lap_number_and_sum(const Configuration& x, double s, double T, const Roof& r) {
  require(T >= 0.0, "flow time must be nonnegative");
  const double target = s + T;
  CompensatedSum S;
  std::size_t n = 0;
  for (;;) {
    const double next = S.value() + detail::roof_at(r, x, static_cast<std::ptrdiff_t>(n));
    if (next > target) break;
    S.add(detail::roof_at(r, x, static_cast<std::ptrdiff_t>(n)));
    ++n;
  }
  return {n, S.value()};
}

inline std::size_t lap_number(const Configuration& x, double s, double T, const Roof& r) {
  return lap_number_and_sum(x, s, T, r).first;
}

inline void validate_point(const SuspensionPoint& z, const Roof& r) {
  const double h = detail::roof_at(r, z.base, 0);
  require(z.s >= 0.0 && z.s < h, "suspension height must lie in [0, r(x))");
}

/// f_T(x, s) = (sigma^n x, s + T - S_n r(x)).
inline SuspensionPoint flow_point(const SuspensionPoint& z, double T, const Roof& r) {
  validate_point(z, r);
  const auto [n, S] = lap_number_and_sum(z.base, z.s, T, r);
  SuspensionPoint out{z.base.shifted(static_cast<std::ptrdiff_t>(n)), z.s + T - S};
  // Rounding can leave the height a hair outside [0, r).
  const double h = detail::roof_at(r, out.base, 0);
  out.s = std::clamp(out.s, 0.0, std::nextafter(h, 0.0));
  return out;
}

struct FlowIntegral {
  double value;        // int_0^T phi(f_t z) dt
  double birkhoff;     // S_n phi_r(x)
  double boundary;     // I_T(x, s)
  double boundary_cap; // (s + r(sigma^n x)) sup|phi|
  std::size_t laps;
};

/// int_0^T phi(f_t(x, s)) dt = S_n phi_r(x) + I_T(x, s).
inline FlowIntegral flow_integral(const FlowObservable& phi, const SuspensionPoint& z, double T, const Roof& r) {
  validate_point(z, r);
  const auto [n, S] = lap_number_and_sum(z.base, z.s, T, r);
  const int depth = joint_depth(r, phi);
  CompensatedSum birk;
  for (std::size_t i = 0; i < n; ++i) {
    const Word w = detail::window_at(z.base, static_cast<std::ptrdiff_t>(i), depth);
    birk.add(phi_r(phi, w, r));
  }
  const Word w0 = detail::window_at(z.base, 0, depth);
  const Word wn = detail::window_at(z.base, static_cast<std::ptrdiff_t>(n), depth);
  const double tail = z.s + T - S;
  const double boundary = phi.integral(wn, 0.0, tail) - phi.integral(w0, 0.0, z.s);
  const double rn = r(wn);
  const double cap = (z.s + rn) * phi.sup_abs(r.max());
  if (std::abs(boundary) > cap * (1.0 + 1e-12) + 1e-12)
    throw std::logic_error("boundary term exceeds (s + r(sigma^n x)) sup|phi|");
  return {birk.value() + boundary, birk.value(), boundary, cap, n};
}

struct RhoReport {
  FlowObservable rho;              // phi(x, t) - phi_r(x)
  double phi_sup;                  // sup |phi| on the fibers
  double phi_r_sup;                // sup |phi_r|
  double rho_norm;                 // sup |rho| <= phi_sup + phi_r_sup
  double rho_norm_bound;           // (1 + r1) phi_sup
  double c1;                       // 2 r1 ||rho||
  std::vector<double> rho_r;       // int_0^{r(x)} rho(x, t) dt per base pattern
  double rho_r_max_abs;
};

/// rho = phi - phi_r and its constants; `r1` bounds the fiber support of phi.
inline RhoReport rho(const FlowObservable& phi, const Roof& r, double r1) {
  require(phi.closed_form(), "rho needs a closed-form flow observable");
  require(r1 >= r.r0, "support bound r1 must be at least r0");
  const int depth = joint_depth(r, phi);
  const double sup = phi.sup_abs(r.max());
  require(std::isfinite(sup), "rho needs a bounded observable");
  for (const auto& list : phi.pieces())
    for (const auto& p : list)
      if (p.t1 > r1 && p.t0 < r.max())
        require(FiberPiece{std::max(p.t0, r1), p.t1, p.coeffs}.sup_abs(r.max()) == 0.0,
                "flow observable is not supported in [0, r1)");
  const Observable pr = phi_r_observable(phi, r);
  std::vector<std::vector<FiberPiece>> pieces(pr.patterns());
  for (std::size_t i = 0; i < pieces.size(); ++i) {
    const Word w = index_to_word(i, phi.alphabet(), depth);
    pieces[i] = phi.pieces()[phi.pattern(w)];
    pieces[i].push_back({0.0, kInf, {-pr.at_index(i)}});
  }
  RhoReport rep{FlowObservable(phi.alphabet(), depth, std::move(pieces)), sup, pr.sup_abs(), 0.0, 0.0, 0.0, {}, 0.0};
  rep.rho_norm = rep.rho.sup_abs(r.max());
  rep.rho_norm_bound = (1.0 + r1) * sup;
  rep.c1 = 2.0 * r1 * rep.rho_norm;
  for (std::size_t i = 0; i < pr.patterns(); ++i) {
    const Word w = index_to_word(i, phi.alphabet(), depth);
    rep.rho_r.push_back(rep.rho.integral(w, 0.0, r(w)));
    rep.rho_r_max_abs = std::max(rep.rho_r_max_abs, std::abs(rep.rho_r.back()));
  }
  return rep;
}

/// Draws points of mu_r pattern-exactly: the first B = max(memory, depth r)
/// symbols with probability mu[w] r(w) / mu(r), the rest from the chain,
/// the height uniform on [0, r(x)).
class MuRSampler {
 public:
  MuRSampler(const MarkovMeasure& mu, const Roof& r) : mu_(&mu), r_(&r) {
    require(mu.alphabet() == r.r.alphabet(), "roof and measure alphabets differ");
    block_ = std::max(mu.memory(), r.depth());
    const std::uint64_t n = checked_pow(static_cast<std::uint64_t>(mu.alphabet()), static_cast<unsigned>(block_));
    require(n <= (std::uint64_t{1} << 22), "initial block enumeration too large");
    cdf_.resize(n);
    double acc = 0.0;
    for (std::uint64_t i = 0; i < n; ++i) {
      const Word w = index_to_word(i, mu.alphabet(), block_);
      cdf_[i] = acc += mu.cylinder_mass(w) * r(w);
    }
    mean_roof_ = acc;
  }

  double mean_roof() const noexcept { return mean_roof_; }
  int block() const noexcept { return block_; }

  /// Base word of length `len` (>= block) and a height.
  double sample(RandomStream& rng, Word& w, std::size_t len) const {
    require(len >= static_cast<std::size_t>(block_), "window shorter than the initial block");
    w.resize(len);
    const std::size_t i = rng.pick(cdf_);
    const Word head = index_to_word(i, mu_->alphabet(), block_);
    std::copy(head.begin(), head.end(), w.begin());
    const int D = mu_->memory();
    std::size_t u = static_cast<std::size_t>(word_to_index(std::span<const Symbol>(w.data() + block_ - D, static_cast<std::size_t>(D)), mu_->alphabet()));
    for (std::size_t k = static_cast<std::size_t>(block_); k < len; ++k) {
      const int a = mu_->step(rng, u);
      w[k] = static_cast<Symbol>(a);
      u = mu_->successor(u, a);
    }
    return rng.uniform() * (*r_)(w);
  }

  SuspensionPoint sample_point(RandomStream& rng, std::size_t len) const {
    Word w;
    const double s = sample(rng, w, len);
    return {Configuration(mu_->alphabet(), std::move(w), 0, Extension::none), s};
  }

 private:
  const MarkovMeasure* mu_;
  const Roof* r_;
  int block_;
  std::vector<double> cdf_;
  double mean_roof_;
};

inline SuspensionPoint sample_mu_r(const MarkovMeasure& mu, const Roof& r, RandomStream& rng, std::size_t window = 64) {
  return MuRSampler(mu, r).sample_point(rng, window);
}

struct ResampledBatch {
  std::vector<SuspensionPoint> points;
  double ess;        // effective sample size of the weighted batch
  std::size_t batch;
};

/// Importance resampling: draw `batch` bases from mu, weight by r, resample `count`.
inline ResampledBatch sample_mu_r_batch(const MarkovMeasure& mu, const Roof& r, RandomStream& rng, std::size_t batch,
                                        std::size_t count, std::size_t window = 64) {
  require(batch >= 1 && count >= 1, "batch and count must be positive");
  std::vector<Word> words(batch);
  std::vector<double> cdf(batch);
  double acc = 0.0, acc2 = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    mu.sample_word(rng, words[i], window);
    const double w = r(words[i]);
    cdf[i] = acc += w;
    acc2 += w * w;
  }
  ResampledBatch out{{}, acc * acc / acc2, batch};
  out.points.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t i = rng.pick(cdf);
    const double s = rng.uniform() * r(words[i]);
    out.points.push_back({Configuration(mu.alphabet(), words[i], 0, Extension::none), s});
  }
  return out;
}

struct TailReport {
  std::vector<double> levels;
  std::vector<double> tail;      // mu{r > L}
  double eps0;
  double c0;                     // int e^{eps0 r} dmu
  bool fitted;                   // eps0 from a log-linear fit of the tail
  bool certified;                // mu{r > L} <= C0 e^{-eps0 L} on the grid
  std::string note;
};

/// Exact roof tail on a grid, a fitted exponential rate and the Markov certificate.
inline TailReport tail_estimate(const MarkovMeasure& mu, const Roof& r, std::vector<double> levels,
                                double fallback_eps0 = 1.0) {
  require(std::is_sorted(levels.begin(), levels.end()), "tail levels must be increasing");
  std::vector<double> mass(r.r.patterns());
  for (std::size_t i = 0; i < mass.size(); ++i) mass[i] = mu.cylinder_mass(index_to_word(i, r.r.alphabet(), r.depth()));
  TailReport rep{levels, {}, fallback_eps0, 0.0, false, true, ""};
  for (double L : levels) {
    CompensatedSum s;
    for (std::size_t i = 0; i < mass.size(); ++i)
      if (r.r.at_index(i) > L) s.add(mass[i]);
    rep.tail.push_back(std::max(s.value(), 0.0));
  }
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < levels.size(); ++i)
    if (rep.tail[i] > 0.0 && rep.tail[i] < 1.0) {
      xs.push_back(levels[i]);
      ys.push_back(std::log(rep.tail[i]));
    }
  if (xs.size() >= 2) {
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) mx += xs[i], my += ys[i];
    mx /= static_cast<double>(xs.size());
    my /= static_cast<double>(xs.size());
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) sxx += (xs[i] - mx) * (xs[i] - mx), sxy += (xs[i] - mx) * (ys[i] - my);
    if (sxx > 0 && sxy < 0) {
      rep.eps0 = -sxy / sxx;
      rep.fitted = true;
    }
  }
  if (!rep.fitted)
    rep.note = "no exponential decay visible on the grid (bounded roof); eps0 set to the fallback";
  else
    rep.note = "fit restricted to levels inside the roof's range";
  CompensatedSum c;
  for (std::size_t i = 0; i < mass.size(); ++i) c.add(mass[i] * std::exp(rep.eps0 * r.r.at_index(i)));
  rep.c0 = c.value();
  for (std::size_t i = 0; i < levels.size(); ++i)
    rep.certified = rep.certified && rep.tail[i] <= rep.c0 * std::exp(-rep.eps0 * levels[i]) * (1 + 1e-12);
  return rep;
}

}  // namespace zipflow
