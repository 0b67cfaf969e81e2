#pragma once

// Large-deviation experiments on the shift and on suspension flows, plus a
// demonstration run of the renormalized induction.
//
// Monte Carlo comes in two flavours. Plain sampling counts integer hits and
// reports Wilson intervals. Importance sampling draws from an even mixture
// of equilibrium states of psi + t h tilted so that the deviation is typical,
// and weights each path by the likelihood ratio of the symbols actually
// generated; for the flow the first block carries the extra r(x) factor of
// mu_r, which cancels in the ratio up to normalizers. Every sample owns a
// Philox stream keyed by (grid point, sample index).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "zipflow/core.hpp"
#include "zipflow/parallel.hpp"
#include "zipflow/rauzy.hpp"
#include "zipflow/rng.hpp"
#include "zipflow/shift.hpp"
#include "zipflow/stats.hpp"
#include "zipflow/suspension.hpp"
#include "zipflow/thermo.hpp"
#include "zipflow/zippered.hpp"

namespace zipflow {

enum class EstimatorMode { exact, mc, both };
enum class SamplerKind { importance, plain };

inline const char* to_string(EstimatorMode m) {
  return m == EstimatorMode::exact ? "exact" : m == EstimatorMode::mc ? "mc" : "both";
}
inline const char* to_string(SamplerKind s) { return s == SamplerKind::importance ? "importance" : "plain"; }

struct McSettings {
  std::uint64_t samples = 100000;
  std::uint64_t seed = 1;
  int workers = 0;              // 0: default_workers()
  std::size_t block = 4096;     // samples per reduction block
  SamplerKind sampler = SamplerKind::importance;
  double level = 0.95;
  std::uint64_t min_hits = 10;  // fewer hits: point left out of the fit
};

struct GridPoint {
  double x = 0.0;                 // n or T
  std::string method;             // exact, plain, importance, none
  double p = 0.0;                 // estimate of the >= event
  double p_strict = 0.0;          // estimate of the > event
  double ci_lo = 0.0, ci_hi = 0.0;
  double log_p = NAN;
  double log_se = NAN;            // standard error of log p
  std::uint64_t hits = 0, hits_strict = 0, samples = 0;
  double ess = 0.0;               // effective number of hits
  double exact = NAN;             // exact probability when enumerated
  double exact_strict = NAN;
  std::optional<bool> agrees;     // |p_mc - p_exact| <= 3 se
  bool used_in_fit = false;
  std::string flag;
};

struct BoundTerm {
  std::string name;
  double value;
  std::string note;
};

struct DeviationReport {
  std::string kind;  // shift, flow, lap
  double eps = 0.0;  // epsilon, or zeta for the lap deviation
  double mean = 0.0; // centering constant removed from the observable
  std::vector<GridPoint> points;
  std::optional<stats::SlopeFit> fit;
  std::optional<stats::SlopeFit> fit_corrected;  // log p + (1/2) log x
  double bound_upper = NAN;
  double bound_upper_literal = NAN;
  double bound_roof = NAN;
  double bound_lower = NAN;
  std::vector<BoundTerm> terms;
  std::string verdict = "inconclusive";
  std::string sandwich = "n/a";
  std::optional<bool> negative_slope;
  std::vector<std::string> notes;
};

namespace detail {

/// Order-deterministic log-domain sum of positive terms.
struct LogSum {
  double m = -kInf;
  double s = 0.0;
  void add(double x) {
    if (x == -kInf) return;
    if (x <= m) {
      s += std::exp(x - m);
    } else {
      s = s * std::exp(m - x) + 1.0;
      m = x;
    }
  }
  void merge(const LogSum& o) {
    if (o.m == -kInf) return;
    if (m == -kInf) {
      *this = o;
      return;
    }
    if (o.m <= m) {
      s += o.s * std::exp(o.m - m);
    } else {
      s = s * std::exp(m - o.m) + o.s;
      m = o.m;
    }
  }
  double log() const { return m == -kInf ? -kInf : m + std::log(s); }
};

struct Tally {
  std::uint64_t hits = 0, hits_strict = 0;
  LogSum w, w2, ws, ws2;
  void merge(const Tally& o) {
    hits += o.hits;
    hits_strict += o.hits_strict;
    w.merge(o.w);
    w2.merge(o.w2);
    ws.merge(o.ws);
    ws2.merge(o.ws2);
  }
  void record(bool hit, bool hit_strict, double log_w) {
    if (hit) {
      ++hits;
      w.add(log_w);
      w2.add(2.0 * log_w);
    }
    if (hit_strict) {
      ++hits_strict;
      ws.add(log_w);
      ws2.add(2.0 * log_w);
    }
  }
};

/// Log-domain tables of one Markov measure, plus an optional r-weighted
/// law for the first `block` symbols.
struct ChainTables {
  int L = 0, D = 0;
  std::size_t states = 1;
  std::vector<double> log_pi, log_P, pi_cdf, row_cdf;
  int block = 0;
  std::vector<double> block_cdf;
  double log_norm = 0.0;  // log of the block normalizer (log mu(r))

  ChainTables() = default;
  ChainTables(const MarkovMeasure& m, const Roof* r) : L(m.alphabet()), D(m.memory()), states(m.states()) {
    log_pi.resize(states);
    pi_cdf.resize(states);
    double acc = 0.0;
    for (std::size_t u = 0; u < states; ++u) {
      log_pi[u] = std::log(m.stationary()[u]);
      pi_cdf[u] = acc += m.stationary()[u];
    }
    log_P.resize(states * static_cast<std::size_t>(L));
    row_cdf.resize(log_P.size());
    for (std::size_t u = 0; u < states; ++u) {
      double c = 0.0;
      for (int a = 0; a < L; ++a) {
        const std::size_t k = u * static_cast<std::size_t>(L) + static_cast<std::size_t>(a);
        log_P[k] = std::log(m.transition(u, a));
        row_cdf[k] = c += m.transition(u, a);
      }
    }
    if (r) {
      block = std::max(D, r->depth());
      const std::uint64_t n = checked_pow(static_cast<std::uint64_t>(L), static_cast<unsigned>(block));
      if (n > (std::uint64_t{1} << 22)) throw ResourceError("initial block enumeration too large");
      block_cdf.resize(n);
      double z = 0.0;
      for (std::uint64_t i = 0; i < n; ++i) {
        const Word w = index_to_word(i, L, block);
        block_cdf[i] = z += m.cylinder_mass(w) * (*r)(w);
      }
      log_norm = std::log(z);
    }
  }
};

/// Draws one path from a mixture of chains and tracks log densities of the
/// target and of every component over the generated symbols.
class PathSampler {
 public:
  PathSampler(const ChainTables* target, std::vector<const ChainTables*> comps, bool plain)
      : t_(target), c_(std::move(comps)), plain_(plain), lq_(c_.size()) {
    log_k_ = std::log(static_cast<double>(c_.size()));
  }

  void start(RandomStream& rng) {
    k_ = c_.size() > 1 ? static_cast<std::size_t>(rng.uniform() * static_cast<double>(c_.size())) : 0;
    if (k_ >= c_.size()) k_ = c_.size() - 1;
    count_ = 0;
    u_ = 0;
    head_.clear();
    lt_ = 0.0;
    std::fill(lq_.begin(), lq_.end(), 0.0);
    const ChainTables& c = *c_[k_];
    starting_ = true;
    if (t_->D == 0) add_initial();
    if (c.block > 0) {
      const std::size_t i = rng.pick(c.block_cdf);
      // Emit the block symbols most significant first.
      std::uint64_t div = checked_pow(static_cast<std::uint64_t>(c.L), static_cast<unsigned>(c.block - 1));
      std::uint64_t rest = i;
      for (int j = 0; j < c.block; ++j) {
        push(static_cast<int>(rest / div));
        rest %= div;
        if (div > 1) div /= static_cast<std::uint64_t>(c.L);
      }
    } else if (t_->D > 0) {
      const std::size_t u = rng.pick(c.pi_cdf);
      const Word head = index_to_word(u, c.L, c.D);
      for (Symbol s : head) push(s);
    }
    starting_ = false;
  }

  int next(RandomStream& rng) {
    const ChainTables& c = *c_[k_];
    const auto L = static_cast<std::size_t>(c.L);
    const int a = static_cast<int>(rng.pick(std::span<const double>(c.row_cdf.data() + u_ * L, L)));
    push(a);
    return a;
  }

  std::size_t count() const noexcept { return count_; }
  /// Symbols emitted by start().
  const std::vector<int>& head() const noexcept { return head_; }

  double log_ratio() const {
    if (plain_) return 0.0;
    double m = -kInf;
    for (std::size_t k = 0; k < c_.size(); ++k) m = std::max(m, lq_[k] - c_[k]->log_norm);
    double s = 0.0;
    for (std::size_t k = 0; k < c_.size(); ++k) s += std::exp(lq_[k] - c_[k]->log_norm - m);
    return (lt_ - t_->log_norm) - (m + std::log(s) - log_k_);
  }

 private:
  void add_initial() {
    lt_ += t_->log_pi[u_];
    if (!plain_)
      for (std::size_t k = 0; k < c_.size(); ++k) lq_[k] += c_[k]->log_pi[u_];
  }

  void push(int a) {
    const int D = t_->D;
    if (starting_) head_.push_back(a);
    if (static_cast<int>(count_) >= D) {
      const std::size_t e = u_ * static_cast<std::size_t>(t_->L) + static_cast<std::size_t>(a);
      lt_ += t_->log_P[e];
      if (!plain_)
        for (std::size_t k = 0; k < c_.size(); ++k) lq_[k] += c_[k]->log_P[e];
    }
    u_ = t_->states > 1 ? (u_ * static_cast<std::size_t>(t_->L) + static_cast<std::size_t>(a)) % t_->states : 0;
    ++count_;
    if (D > 0 && static_cast<int>(count_) == D) add_initial();
  }

  const ChainTables* t_;
  std::vector<const ChainTables*> c_;
  bool plain_;
  std::vector<double> lq_;
  double lt_ = 0.0, log_k_ = 0.0;
  std::size_t k_ = 0, count_ = 0, u_ = 0;
  bool starting_ = false;
  std::vector<int> head_;
};

/// Equilibrium state of psi + t h with nu(h) = v, if v is reachable.
inline std::optional<MarkovGibbsMeasure> tilted_chain(const Observable& psi, const Observable& h, double v, int memory,
                                                      std::string* why = nullptr) {
  const RateValue rv = rate_function(psi, h, v);
  if (rv.status != RateStatus::interior || !std::isfinite(rv.t_star)) {
    if (why) *why = rv.status == RateStatus::outside ? "level outside the range of nu(h)" : "level on the boundary of the range";
    return std::nullopt;
  }
  return equilibrium_measure(psi + h * rv.t_star, 0, memory);
}

inline GridPoint summarize(double x, const Tally& t, std::uint64_t n, SamplerKind kind, double level,
                           std::uint64_t min_hits) {
  GridPoint g;
  g.x = x;
  g.samples = n;
  g.hits = t.hits;
  g.hits_strict = t.hits_strict;
  const double N = static_cast<double>(n);
  if (kind == SamplerKind::plain) {
    g.method = "plain";
    g.p = static_cast<double>(t.hits) / N;
    g.p_strict = static_cast<double>(t.hits_strict) / N;
    const auto ci = stats::wilson(t.hits, n, level);
    g.ci_lo = ci.lo;
    g.ci_hi = ci.hi;
    g.ess = static_cast<double>(t.hits);
    if (t.hits > 0) {
      g.log_p = std::log(g.p);
      g.log_se = std::sqrt((1.0 - g.p) / (N * g.p));
    }
  } else {
    g.method = "importance";
    const double lw = t.w.log(), lw2 = t.w2.log();
    g.p = std::exp(lw - std::log(N));
    g.p_strict = std::exp(t.ws.log() - std::log(N));
    if (t.hits > 0) {
      g.log_p = lw - std::log(N);
      // Var(W)/N relative to p^2: (E W^2 / p^2 - 1) / N.
      const double rel2 = std::exp(lw2 - 2.0 * lw + std::log(N)) - 1.0;
      g.log_se = std::sqrt(std::max(rel2, 0.0) / N);
      g.ess = std::exp(2.0 * lw - lw2);
      const double z = stats::normal_quantile(0.5 + 0.5 * level);
      g.ci_lo = std::exp(g.log_p - z * g.log_se);
      g.ci_hi = std::exp(g.log_p + z * g.log_se);
    }
  }
  if (t.hits == 0) g.flag = "zero hits: point dropped";
  else if (t.hits < min_hits) g.flag = "fewer than " + std::to_string(min_hits) + " hits: point dropped";
  g.used_in_fit = t.hits >= min_hits && std::isfinite(g.log_p) && g.log_se > 0.0;
  return g;
}

/// Weighted fit over usable points, verdict against the bounds.
inline void finish(DeviationReport& rep, double level, bool sampled = true) {
  std::vector<double> x, y, w;
  for (const auto& g : rep.points)
    if (g.used_in_fit) {
      x.push_back(g.x);
      y.push_back(g.log_p);
      w.push_back(1.0 / (g.log_se * g.log_se));
    }
  if (x.size() < 3) {
    rep.notes.push_back("fewer than 3 usable grid points: no slope fit");
    return;
  }
  rep.fit = stats::slope_fit(x, y, w, level, sampled);
  const double s = rep.fit->slope, hw = rep.fit->half_width;
  if (!std::isnan(rep.bound_upper)) rep.verdict = s <= rep.bound_upper + hw ? "consistent" : "inconsistent";
  // Deviation probabilities carry a polynomial prefactor x^{-1/2}, which
  // tilts a finite-grid slope by about -1/(2x); the two-sided check removes it.
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += 0.5 * std::log(x[i]);
  rep.fit_corrected = stats::slope_fit(x, y, w, level, sampled);
  const double sc = rep.fit_corrected->slope, hc = rep.fit_corrected->half_width;
  if (!std::isnan(rep.bound_lower) && !std::isnan(rep.bound_upper))
    rep.sandwich = (sc >= rep.bound_lower - hc && sc <= rep.bound_upper + hc) ? "within" : "outside";
}

inline int resolve_workers(int w) { return w > 0 ? w : default_workers(); }

template <class SampleFn>
Tally run_point(std::uint64_t point, const McSettings& mc, SampleFn&& one) {
  require(mc.block >= 1, "block size must be positive");
  const std::size_t blocks = static_cast<std::size_t>((mc.samples + mc.block - 1) / mc.block);
  auto parts = block_map<Tally>(blocks, resolve_workers(mc.workers), [&](std::size_t b) {
    Tally t;
    const std::uint64_t lo = b * mc.block, hi = std::min<std::uint64_t>(mc.samples, lo + mc.block);
    for (std::uint64_t i = lo; i < hi; ++i) {
      RandomStream rng(mc.seed, stream_id(point, i));
      one(rng, t);
    }
    return t;
  });
  Tally total;
  for (const auto& p : parts) total.merge(p);
  return total;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Shift

struct ShiftExperiment {
  Observable psi;
  Observable phi;
  double eps = 0.5;
  std::vector<std::size_t> n_grid;
  EstimatorMode mode = EstimatorMode::mc;
  McSettings mc;
  double exact_budget_nats = kEnumerationBudgetNats;
};

inline void validate(const ShiftExperiment& e) {
  require(e.psi.alphabet() == e.phi.alphabet(), "psi and phi alphabets differ");
  require(e.eps > 0.0, "epsilon must be positive");
  require(!e.n_grid.empty(), "n_grid is empty");
  require(std::is_sorted(e.n_grid.begin(), e.n_grid.end()) &&
              std::adjacent_find(e.n_grid.begin(), e.n_grid.end()) == e.n_grid.end(),
          "n_grid must be strictly increasing");
  require(e.n_grid.front() >= 1, "n_grid entries must be positive");
  if (e.mode != EstimatorMode::exact) require(e.mc.samples >= 1000, "Monte Carlo needs at least 1000 samples");
}

/// mu{|S_n phi| >= n eps} over n_grid for the equilibrium state of psi.
inline DeviationReport deviate_shift(const ShiftExperiment& e) {
  validate(e);
  const int L = e.psi.alphabet();
  const int D = std::max(e.psi.depth(), e.phi.depth()) - 1;
  const MarkovGibbsMeasure mu = equilibrium_measure(e.psi, 0, D);
  DeviationReport rep;
  rep.kind = "shift";
  rep.eps = e.eps;
  rep.mean = mu.integrate(e.phi);
  const Observable phic = e.phi.plus(-rep.mean);

  const LivsicVerdict lv = livsic_test(phic, 8);
  if (lv.coboundary) rep.notes.push_back("centered phi has vanishing periodic sums up to period 8 (degenerate)");

  const DeviationBound db = deviation_bound(e.psi, e.phi, e.eps);
  rep.bound_upper = db.value;
  rep.bound_lower = db.value_strict;
  rep.terms.push_back({"rate_ge", db.value, "sup over |nu(phi)| >= eps"});
  rep.terms.push_back({"rate_gt", db.value_strict, "sup over |nu(phi)| > eps"});
  if (!db.diagnostic.empty()) rep.notes.push_back(db.diagnostic);
  if (db.degenerate) rep.bound_upper = rep.bound_lower = -kInf;

  const bool empty = e.eps > phic.sup_abs() * (1.0 + 1e-12);
  if (empty) rep.notes.push_back("empty deviation set");

  // Importance components.
  std::vector<MarkovGibbsMeasure> tilts;
  SamplerKind kind = e.mc.sampler;
  if (kind == SamplerKind::importance && !empty) {
    for (double v : {e.eps, -e.eps}) {
      std::string why;
      if (auto m = detail::tilted_chain(e.psi, phic, v, D, &why)) tilts.push_back(std::move(*m));
      else rep.notes.push_back(std::string("tilt to ") + (v > 0 ? "+" : "-") + "eps unavailable: " + why);
    }
    if (tilts.empty()) {
      kind = SamplerKind::plain;
      rep.notes.push_back("no reachable tilt: falling back to plain sampling");
    }
  }
  const detail::ChainTables target(mu, nullptr);
  std::vector<detail::ChainTables> comp_tables;
  for (const auto& t : tilts) comp_tables.emplace_back(t, nullptr);
  std::vector<const detail::ChainTables*> comps;
  if (kind == SamplerKind::plain) comps.push_back(&target);
  else
    for (const auto& c : comp_tables) comps.push_back(&c);

  const int d = phic.depth();
  const std::uint64_t pat = phic.patterns();
  for (std::size_t pi = 0; pi < e.n_grid.size(); ++pi) {
    const std::size_t n = e.n_grid[pi];
    GridPoint g;
    g.x = static_cast<double>(n);
    const bool try_exact = e.mode != EstimatorMode::mc;
    const bool fits_budget = static_cast<double>(n + static_cast<std::size_t>(d - 1)) * std::log(static_cast<double>(L)) <=
                             e.exact_budget_nats;
    if (empty) {
      g.method = "none";
      g.flag = "empty deviation set";
      rep.points.push_back(g);
      continue;
    }
    if (e.mode != EstimatorMode::exact || !fits_budget) {
      if (e.mode == EstimatorMode::exact) rep.notes.push_back("n = " + std::to_string(n) + " exceeds the exact budget; sampled instead");
      const double thr = static_cast<double>(n) * e.eps;
      const double slack = detail::deviation_slack(n, e.eps);
      const std::size_t len = n + static_cast<std::size_t>(d - 1);
      auto fused = [&](RandomStream& rng, detail::Tally& t) {
        detail::PathSampler ps(&target, comps, kind == SamplerKind::plain);
        ps.start(rng);
        std::uint64_t idx = 0;
        std::size_t seen = 0;
        CompensatedSum S;
        auto feed = [&](int a) {
          idx = (idx * static_cast<std::uint64_t>(L) + static_cast<std::uint64_t>(a)) % pat;
          ++seen;
          if (seen >= static_cast<std::size_t>(d) && seen - static_cast<std::size_t>(d) < n) S.add(phic.at_index(idx));
        };
        for (int a : ps.head()) feed(a);
        while (seen < len) feed(ps.next(rng));
        const double s = std::abs(S.value());
        t.record(s >= thr - slack, s > thr + slack, ps.log_ratio());
      };
      const detail::Tally tally = detail::run_point(pi, e.mc, fused);
      g = detail::summarize(static_cast<double>(n), tally, e.mc.samples, kind, e.mc.level, e.mc.min_hits);
    }
    if (try_exact && fits_budget) {
      const auto ex = exact_deviation_probability(mu, phic, n, e.eps, false, false, e.exact_budget_nats);
      const auto exs = exact_deviation_probability(mu, phic, n, e.eps, true, false, e.exact_budget_nats);
      g.exact = ex.probability;
      g.exact_strict = exs.probability;
      if (e.mode == EstimatorMode::exact) {
        g.method = "exact";
        g.p = ex.probability;
        g.p_strict = exs.probability;
        g.ci_lo = g.ci_hi = g.p;
        g.log_p = g.p > 0 ? std::log(g.p) : NAN;
        g.log_se = 0.0;
        g.hits = ex.hits;
        g.hits_strict = exs.hits;
        g.used_in_fit = g.p > 0;
      } else {
        const double se = g.method == "plain" ? stats::wilson_se(g.hits, g.samples)
                                              : (std::isfinite(g.log_se) ? g.p * g.log_se : 0.0);
        g.agrees = std::abs(g.p - g.exact) <= 3.0 * se + 1e-15;
      }
    }
    rep.points.push_back(g);
  }
  // Exact points carry no sampling error. Alone they get an unweighted fit;
  // next to sampled points they take the smallest sampled error.
  double floor_se = kInf;
  for (const auto& g : rep.points)
    if (g.used_in_fit && g.method != "exact") floor_se = std::min(floor_se, g.log_se);
  const bool all_exact = !std::isfinite(floor_se);
  for (auto& g : rep.points)
    if (g.used_in_fit && g.method == "exact") g.log_se = all_exact ? 1.0 : floor_se;
  detail::finish(rep, e.mc.level, !all_exact);
  for (auto& g : rep.points)
    if (g.method == "exact") g.log_se = 0.0;
  return rep;
}

// ---------------------------------------------------------------------------
// Flow

struct FlowBoundParams {
  double xi = 0.1;
  double a = 0.05;
  std::optional<double> zeta;      // default a / ((1 + a) rbar)
  double lap_xi = 0.0;             // slack in the lap-number threshold
  std::vector<double> tail_levels; // default: 0..2 max r in 32 steps
  double eps0_fallback = 1.0;
};

struct FlowExperiment {
  Observable psi;
  Roof r;
  FlowObservable phi;
  double eps = 0.5;
  std::vector<double> T_grid;
  McSettings mc;
  FlowBoundParams bounds;
  double min_ess = 100.0;
};

struct FlowBounds {
  double rbar, r0, eps0, c0, zeta;
  std::vector<BoundTerm> terms;
  double upper, upper_literal, roof, lower;
  std::vector<std::string> notes;
};

/// Itemized upper bound terms and the compact-support lower bound.
inline FlowBounds flow_bounds(const Observable& psi, const Roof& r, const Observable& phi_r_centered, double phi_sup,
                              double eps, const FlowBoundParams& p) {
  const int D = std::max({psi.depth(), r.depth(), phi_r_centered.depth()}) - 1;
  const MarkovGibbsMeasure mu = equilibrium_measure(psi, 0, D);
  FlowBounds b{};
  b.rbar = mu.integrate(r.r);
  b.r0 = r.r0;
  const double a = p.a, xi = p.xi;
  b.zeta = p.zeta.value_or(a / ((1.0 + a) * b.rbar));
  std::vector<double> levels = p.tail_levels;
  if (levels.empty())
    for (int i = 0; i <= 32; ++i) levels.push_back(2.0 * r.max() * i / 32.0);
  const TailReport tail = tail_estimate(mu, r, levels, p.eps0_fallback);
  b.eps0 = tail.eps0;
  b.c0 = tail.c0;
  b.notes.push_back("tail: " + tail.note);

  auto guard = [](const DeviationBound& d) { return d.degenerate ? -kInf : d.value; };
  const DeviationBound beta = deviation_bound(psi, phi_r_centered, eps * (1 - xi) * (1 - a) * b.rbar);
  const double t1 = guard(beta) / ((1 + a) * b.rbar);
  b.terms.push_back({"beta", t1, "beta / ((1 + a) rbar)"});

  const double zr = b.zeta * b.rbar;
  const double theta = b.rbar * (1.0 - 1.0 / ((1.0 - p.lap_xi) * (1.0 + zr)));
  double t2 = NAN;
  if (theta > 0.0) {
    const DeviationBound gamma = deviation_bound(psi, r.r, theta);
    t2 = guard(gamma) * (2 + a) / ((1 + a) * b.rbar);
    if (gamma.degenerate) b.notes.push_back("roof is cohomologous to a constant: lap deviation set eventually empty");
  } else {
    b.notes.push_back("gamma threshold is not positive for these parameters");
  }
  b.terms.push_back({"gamma", t2, "gamma (2 + a) / ((1 + a) rbar)"});
  const double t3 = -(b.eps0 / 2.0) * (1.0 - b.rbar / (b.r0 * (1.0 - zr)));
  b.terms.push_back({"tail_lap", t3, "-(eps0/2)(1 - rbar/(r0 (1 - zeta rbar)))"});
  const double t4 = phi_sup > 0 ? -b.eps0 * eps * xi / (2.0 * phi_sup) : -kInf;
  b.terms.push_back({"tail_phi", t4, "-eps0 eps xi / (2 |phi|)"});
  b.terms.push_back({"tail_omega", 0.0, "-eps0 omega / (2 |phi|) as omega -> 0"});

  // For a bounded roof the long-lap set {T/n > (1+a) rbar} decays at the
  // rate of r itself; this replaces the tail terms above.
  const RateValue up = rate_function(psi, r.r, b.rbar * (1 + a));
  const double lap_finite = -up.value / ((1 + a) * b.rbar);
  b.terms.push_back({"lap_finite", lap_finite, "-I_r((1 + a) rbar) / ((1 + a) rbar)"});

  b.upper_literal = -kInf;
  for (std::size_t i = 0; i < 5; ++i)
    if (!std::isnan(b.terms[i].value)) b.upper_literal = std::max(b.upper_literal, b.terms[i].value);
  b.upper = std::max(t1, lap_finite);
  if (!std::isnan(t2)) b.upper = std::max(b.upper, t2);
  b.roof = t2;
  if (b.upper_literal >= 0.0)
    b.notes.push_back("literal five-term maximum is nonnegative (uninformative); verdict uses the bounded-roof bound");

  const DeviationBound low = deviation_bound(psi, phi_r_centered, eps * b.rbar / b.r0);
  b.lower = (low.degenerate ? -kInf : low.value_strict) / b.r0;
  b.terms.push_back({"lower", b.lower, "omega(eps rbar / r0) / r0, strict threshold"});
  return b;
}

namespace detail {

struct FlowSetup {
  int L, J, D;
  MarkovGibbsMeasure mu;
  double rbar;
  std::vector<double> r_tab, phir_tab;  // by joint pattern
  std::uint64_t patterns;
};

inline FlowSetup flow_setup(const Observable& psi, const Roof& r, const Observable& phir) {
  // Windows must cover the r-weighted head block as well.
  const int D = std::max({psi.depth(), r.depth(), phir.depth()}) - 1;
  const int J = std::max({r.depth(), phir.depth(), D});
  FlowSetup s{psi.alphabet(), J, D, equilibrium_measure(psi, 0, D), 0.0, {}, {}, 0};
  s.rbar = s.mu.integrate(r.r);
  const Observable rl = r.r.lifted(J), pl = phir.lifted(J);
  s.patterns = rl.patterns();
  for (std::uint64_t i = 0; i < s.patterns; ++i) {
    s.r_tab.push_back(rl.at_index(i));
    s.phir_tab.push_back(pl.at_index(i));
  }
  return s;
}

struct LapOutcome {
  std::size_t laps;
  double integral;
};

/// One path from the sampler: laps up to time T and, when phi is given,
/// the flow integral over [0, T].
inline LapOutcome walk(PathSampler& ps, RandomStream& rng, const FlowSetup& s, double T, const FlowObservable* phi) {
  ps.start(rng);
  const auto L = static_cast<std::uint64_t>(s.L);
  const auto J = static_cast<std::size_t>(s.J);
  std::uint64_t idx = 0;
  std::size_t seen = 0;
  auto feed = [&](int a) {
    idx = (idx * L + static_cast<std::uint64_t>(a)) % s.patterns;
    ++seen;
  };
  for (int a : ps.head()) feed(a);
  while (seen < J) feed(ps.next(rng));
  const std::uint64_t first = idx;
  const double height = rng.uniform() * s.r_tab[first];
  const double target = height + T;
  CompensatedSum S, P;
  std::size_t n = 0;
  // Window n is x_n..x_{n+J-1}; idx always holds the newest full window.
  for (;;) {
    const double rn = s.r_tab[idx];
    if (S.value() + rn > target) break;
    S.add(rn);
    if (phi) P.add(s.phir_tab[idx]);
    ++n;
    feed(ps.next(rng));
  }
  LapOutcome out{n, 0.0};
  if (phi) {
    const Word w0 = index_to_word(first, s.L, s.J), wn = index_to_word(idx, s.L, s.J);
    out.integral = P.value() + phi->integral(wn, 0.0, target - S.value()) - phi->integral(w0, 0.0, height);
  }
  return out;
}

}  // namespace detail

inline void validate(const FlowExperiment& e) {
  require(e.psi.alphabet() == e.r.r.alphabet() && e.phi.alphabet() == e.psi.alphabet(), "alphabets differ");
  require(e.phi.closed_form(), "flow experiments need a closed-form flow observable");
  require(e.eps > 0.0, "epsilon must be positive");
  require(!e.T_grid.empty(), "T_grid is empty");
  require(std::is_sorted(e.T_grid.begin(), e.T_grid.end()) &&
              std::adjacent_find(e.T_grid.begin(), e.T_grid.end()) == e.T_grid.end(),
          "T_grid must be strictly increasing");
  require(e.T_grid.front() > 0.0, "T_grid entries must be positive");
  require(e.mc.samples >= 1000, "Monte Carlo needs at least 1000 samples");
  require(e.bounds.xi > 0.0 && e.bounds.xi < 1.0, "xi must lie in (0, 1)");
  require(e.bounds.a > 0.0 && e.bounds.a < 1.0, "a must lie in (0, 1)");
  require(e.bounds.lap_xi >= 0.0 && e.bounds.lap_xi < 1.0, "lap_xi must lie in [0, 1)");
}

/// mu_r{|int_0^T phi o f_t| >= eps T} over T_grid.
inline DeviationReport deviate_flow(const FlowExperiment& e) {
  validate(e);
  DeviationReport rep;
  rep.kind = "flow";
  rep.eps = e.eps;
  // Center: mu_r(phi) = mu(phi_r) / mu(r).
  const Observable pr_raw = phi_r_observable(e.phi, e.r);
  detail::FlowSetup s0 = detail::flow_setup(e.psi, e.r, pr_raw);
  rep.mean = s0.mu.integrate(pr_raw) / s0.rbar;
  const FlowObservable phic = e.phi.minus_constant(rep.mean);
  const Observable prc = phi_r_observable(phic, e.r);
  const detail::FlowSetup s = detail::flow_setup(e.psi, e.r, prc);

  const LivsicVerdict lv = livsic_test(prc, 8);
  if (lv.coboundary) rep.notes.push_back("phi_r has vanishing periodic sums up to period 8 (degenerate)");

  const double phi_sup = phic.sup_abs(e.r.max());
  const FlowBounds fb = flow_bounds(e.psi, e.r, prc, phi_sup, e.eps, e.bounds);
  rep.terms = fb.terms;
  rep.bound_upper = fb.upper;
  rep.bound_upper_literal = fb.upper_literal;
  rep.bound_roof = fb.roof;
  rep.bound_lower = fb.lower;
  rep.notes.insert(rep.notes.end(), fb.notes.begin(), fb.notes.end());

  SamplerKind kind = e.mc.sampler;
  std::vector<MarkovGibbsMeasure> tilts;
  if (kind == SamplerKind::importance) {
    for (double sign : {1.0, -1.0}) {
      std::string why;
      const Observable h = prc * sign - e.r.r * e.eps;
      if (auto m = detail::tilted_chain(e.psi, h, 0.0, s.D, &why)) tilts.push_back(std::move(*m));
      else rep.notes.push_back(std::string("tilt to ") + (sign > 0 ? "+" : "-") + "eps unavailable: " + why);
    }
    if (tilts.empty()) {
      kind = SamplerKind::plain;
      rep.notes.push_back("no reachable tilt: falling back to plain sampling");
    }
  }
  const detail::ChainTables target(s.mu, &e.r);
  std::vector<detail::ChainTables> comp_tables;
  for (const auto& t : tilts) comp_tables.emplace_back(t, &e.r);
  std::vector<const detail::ChainTables*> comps;
  if (kind == SamplerKind::plain) comps.push_back(&target);
  else
    for (const auto& c : comp_tables) comps.push_back(&c);

  for (std::size_t pi = 0; pi < e.T_grid.size(); ++pi) {
    const double T = e.T_grid[pi];
    const double thr = e.eps * T, slack = detail::deviation_slack(1, thr);
    auto one = [&](RandomStream& rng, detail::Tally& t) {
      detail::PathSampler ps(&target, comps, kind == SamplerKind::plain);
      const auto o = detail::walk(ps, rng, s, T, &phic);
      const double v = std::abs(o.integral);
      t.record(v >= thr - slack, v > thr + slack, ps.log_ratio());
    };
    const detail::Tally tally = detail::run_point(pi, e.mc, one);
    GridPoint g = detail::summarize(T, tally, e.mc.samples, kind, e.mc.level, e.mc.min_hits);
    if (kind == SamplerKind::importance && g.hits > 0 && g.ess < e.min_ess) {
      g.flag = "effective sample size below " + std::to_string(static_cast<int>(e.min_ess)) + ": inconclusive";
      g.used_in_fit = false;
    }
    rep.points.push_back(g);
  }
  detail::finish(rep, e.mc.level);
  return rep;
}

// ---------------------------------------------------------------------------
// Lap number

struct LapExperiment {
  Observable psi;
  Roof r;
  double zeta = 0.1;
  std::vector<double> T_grid;
  McSettings mc;
  double lap_xi = 0.0;
  double eps0_fallback = 1.0;
};

/// mu_r{|n/T - 1/rbar| >= zeta} over T_grid.
inline DeviationReport lap_deviation(const LapExperiment& e) {
  require(e.psi.alphabet() == e.r.r.alphabet(), "alphabets differ");
  require(e.zeta > 0.0, "zeta must be positive");
  require(!e.T_grid.empty() && std::is_sorted(e.T_grid.begin(), e.T_grid.end()) && e.T_grid.front() > 0.0,
          "T_grid must be positive and increasing");
  require(e.mc.samples >= 1000, "Monte Carlo needs at least 1000 samples");
  const detail::FlowSetup s = detail::flow_setup(e.psi, e.r, Observable::constant(e.psi.alphabet(), 0.0));
  DeviationReport rep;
  rep.kind = "lap";
  rep.eps = e.zeta;
  rep.mean = 1.0 / s.rbar;
  const double zr = e.zeta * s.rbar;

  // Bounds.
  const double theta = s.rbar * (1.0 - 1.0 / ((1.0 - e.lap_xi) * (1.0 + zr)));
  const DeviationBound gamma = deviation_bound(e.psi, e.r.r, theta);
  const double g = gamma.degenerate ? -kInf : gamma.value;
  rep.bound_roof = g * (1.0 + zr) / s.rbar;
  rep.terms.push_back({"gamma", rep.bound_roof, "gamma (1 + zeta rbar) / rbar"});
  std::vector<double> levels;
  for (int i = 0; i <= 32; ++i) levels.push_back(2.0 * e.r.max() * i / 32.0);
  const TailReport tail = tail_estimate(s.mu, e.r, levels, e.eps0_fallback);
  const double t3 = zr < 1.0 ? -(tail.eps0 / 2.0) * (1.0 - s.rbar / (e.r.r0 * (1.0 - zr))) : -kInf;
  rep.terms.push_back({"tail_lap", t3, "-(eps0/2)(1 - rbar/(r0 (1 - zeta rbar)))"});
  double finite = -kInf;
  if (zr < 1.0) {
    const RateValue up = rate_function(e.psi, e.r.r, s.rbar / (1.0 - zr));
    finite = -up.value * (1.0 - zr) / s.rbar;
  }
  rep.terms.push_back({"lap_finite", finite, "-I_r(rbar / (1 - zeta rbar)) (1 - zeta rbar) / rbar"});
  rep.bound_upper_literal = std::max(rep.bound_roof, t3);
  rep.bound_upper = std::max(rep.bound_roof, finite);
  rep.notes.push_back("tail: " + tail.note);
  if (gamma.degenerate) rep.notes.push_back("roof is cohomologous to a constant");

  // Tilts: n/T = 1/rbar + zeta needs mean roof rbar/(1 + zeta rbar), and
  // n/T = 1/rbar - zeta needs rbar/(1 - zeta rbar).
  SamplerKind kind = e.mc.sampler;
  std::vector<MarkovGibbsMeasure> tilts;
  if (kind == SamplerKind::importance) {
    std::vector<double> levels_r{s.rbar / (1.0 + zr)};
    if (zr < 1.0) levels_r.push_back(s.rbar / (1.0 - zr));
    for (double v : levels_r) {
      std::string why;
      if (auto m = detail::tilted_chain(e.psi, e.r.r, v, s.D, &why)) tilts.push_back(std::move(*m));
      else rep.notes.push_back("tilt to mean roof " + std::to_string(v) + " unavailable: " + why);
    }
    if (tilts.empty()) {
      kind = SamplerKind::plain;
      rep.notes.push_back("no reachable tilt: falling back to plain sampling");
    }
  }
  const detail::ChainTables target(s.mu, &e.r);
  std::vector<detail::ChainTables> comp_tables;
  for (const auto& t : tilts) comp_tables.emplace_back(t, &e.r);
  std::vector<const detail::ChainTables*> comps;
  if (kind == SamplerKind::plain) comps.push_back(&target);
  else
    for (const auto& c : comp_tables) comps.push_back(&c);

  for (std::size_t pi = 0; pi < e.T_grid.size(); ++pi) {
    const double T = e.T_grid[pi];
    auto one = [&](RandomStream& rng, detail::Tally& t) {
      detail::PathSampler ps(&target, comps, kind == SamplerKind::plain);
      const auto o = detail::walk(ps, rng, s, T, nullptr);
      const double dev = std::abs(static_cast<double>(o.laps) / T - 1.0 / s.rbar);
      t.record(dev >= e.zeta - 1e-12, dev > e.zeta + 1e-12, ps.log_ratio());
    };
    const detail::Tally tally = detail::run_point(pi, e.mc, one);
    rep.points.push_back(detail::summarize(T, tally, e.mc.samples, kind, e.mc.level, e.mc.min_hits));
  }
  detail::finish(rep, e.mc.level);
  if (rep.fit) rep.negative_slope = rep.fit->slope + rep.fit->half_width < 0.0;
  return rep;
}

struct LapLaw {
  double T;
  double rbar;
  double mean_ratio;      // mean of n/T
  double mean_abs_dev;    // mean of |n/T - 1/rbar|
  double max_abs_dev;
  std::uint64_t samples;
};

/// Law of large numbers for the lap number under mu_r (plain sampling).
inline LapLaw lap_law(const Observable& psi, const Roof& r, double T, const McSettings& mc, std::uint64_t point = 999) {
  const detail::FlowSetup s = detail::flow_setup(psi, r, Observable::constant(psi.alphabet(), 0.0));
  const detail::ChainTables target(s.mu, &r);
  struct Acc {
    CompensatedSum ratio, dev;
    double max_dev = 0.0;
  };
  const std::size_t blocks = static_cast<std::size_t>((mc.samples + mc.block - 1) / mc.block);
  auto parts = block_map<Acc>(blocks, detail::resolve_workers(mc.workers), [&](std::size_t b) {
    Acc a;
    const std::uint64_t lo = b * mc.block, hi = std::min<std::uint64_t>(mc.samples, lo + mc.block);
    for (std::uint64_t i = lo; i < hi; ++i) {
      RandomStream rng(mc.seed, stream_id(point, i));
      detail::PathSampler ps(&target, {&target}, true);
      const auto o = detail::walk(ps, rng, s, T, nullptr);
      const double q = static_cast<double>(o.laps) / T;
      a.ratio.add(q);
      a.dev.add(std::abs(q - 1.0 / s.rbar));
      a.max_dev = std::max(a.max_dev, std::abs(q - 1.0 / s.rbar));
    }
    return a;
  });
  double ratio = 0.0, dev = 0.0, mx = 0.0;
  for (const auto& p : parts) {
    ratio += p.ratio.value();
    dev += p.dev.value();
    mx = std::max(mx, p.max_dev);
  }
  const double N = static_cast<double>(mc.samples);
  return {T, s.rbar, ratio / N, dev / N, mx, mc.samples};
}

// ---------------------------------------------------------------------------
// Renormalized-induction demonstration

struct TeichConfig {
  Permutation pi = Permutation::parse("2 1");
  std::size_t steps = 100000;     // per start
  std::size_t starts = 100;
  std::string observable = "lambda_gap";  // zero, lambda_gap, roof
  double eps = 0.2;
  std::vector<std::size_t> lengths{1000, 10000};
  std::vector<double> roof_levels{0.5, 1.0, 2.0, 4.0, 8.0};
  int holder_depth = 12;
  std::size_t holder_points = 20000;
  std::uint64_t seed = 1;
  int workers = 0;
};

struct TeichReport {
  std::string label = "demonstration on random zippered rectangles; not a sample of any invariant measure";
  std::size_t steps = 0;
  std::size_t restarts = 0;
  std::size_t non_finite = 0;
  std::map<std::string, std::uint64_t> letters;  // "a", "b"
  std::map<int, std::uint64_t> winners;
  double roof_min = kInf, roof_mean = 0.0, roof_max = 0.0;
  std::vector<double> roof_levels;
  std::vector<std::uint64_t> roof_tail;  // count of roof > level
  HolderFit roof_holder;                 // log-Holder fit of the roof on itinerary cylinders
  double observable_mean = 0.0;
  std::vector<std::size_t> lengths;
  std::vector<double> deviation_mass;    // fraction of blocks with |avg - mean| > eps
  std::vector<std::uint64_t> blocks;
};

namespace detail {

inline double teich_observable(const std::string& name, const ZipperedRectangle& x, double tau) {
  if (name == "zero") return 0.0;
  if (name == "lambda_gap") return x.lambda.front() - x.lambda.back();
  if (name == "roof") return tau;
  throw ValidationError("unknown teich observable '" + name + "' (zero, lambda_gap, roof)");
}

struct TeichOrbit {
  std::vector<double> f, tau;
  std::vector<std::uint8_t> code;  // branch bit | winner << 1
  std::size_t restarts = 0, non_finite = 0;
};

}  // namespace detail

inline TeichReport teich_demo(const TeichConfig& c) {
  require_irreducible(c.pi);
  require(c.steps >= 1 && c.starts >= 1, "steps and starts must be positive");
  require(c.eps > 0.0, "eps must be positive");
  for (std::size_t l : c.lengths) require(l >= 1 && l <= c.steps, "orbit lengths must lie in [1, steps]");
  require(c.observable == "zero" || c.observable == "lambda_gap" || c.observable == "roof",
          "unknown teich observable '" + c.observable + "' (zero, lambda_gap, roof)");

  auto orbits = block_map<detail::TeichOrbit>(c.starts, detail::resolve_workers(c.workers), [&](std::size_t k) {
    detail::TeichOrbit o;
    RandomStream rng(c.seed, stream_id(7, k));
    o.f.reserve(c.steps);
    o.tau.reserve(c.steps);
    o.code.reserve(c.steps);
    ZipperedRectangle x = sample_zippered(c.pi, rng);
    while (o.f.size() < c.steps) {
      try {
        RenormalizedStep st = renormalized_step(x);
        bool finite = std::isfinite(st.elapsed);
        for (double v : st.next.lambda) finite = finite && std::isfinite(v);
        for (double v : st.next.delta) finite = finite && std::isfinite(v);
        if (!finite) {
          ++o.non_finite;
          ++o.restarts;
          x = sample_zippered(c.pi, rng);
          continue;
        }
        o.f.push_back(detail::teich_observable(c.observable, x, st.elapsed));
        o.tau.push_back(st.elapsed);
        o.code.push_back(static_cast<std::uint8_t>((st.branch == RauzyLabel::a ? 0 : 1) | (st.winner << 1)));
        x = std::move(st.next);
      } catch (const NonInducibleError&) {
        ++o.restarts;
        x = sample_zippered(c.pi, rng);
      }
    }
    return o;
  });

  TeichReport rep;
  rep.lengths = c.lengths;
  rep.roof_levels = c.roof_levels;
  rep.roof_tail.assign(c.roof_levels.size(), 0);
  CompensatedSum tau_sum, f_tau;
  for (const auto& o : orbits) {
    rep.restarts += o.restarts;
    rep.non_finite += o.non_finite;
    rep.steps += o.f.size();
    for (std::size_t i = 0; i < o.f.size(); ++i) {
      ++rep.letters[(o.code[i] & 1) ? "b" : "a"];
      ++rep.winners[o.code[i] >> 1];
      rep.roof_min = std::min(rep.roof_min, o.tau[i]);
      rep.roof_max = std::max(rep.roof_max, o.tau[i]);
      tau_sum.add(o.tau[i]);
      f_tau.add(o.f[i] * o.tau[i]);
      for (std::size_t j = 0; j < c.roof_levels.size(); ++j) rep.roof_tail[j] += o.tau[i] > c.roof_levels[j];
    }
  }
  rep.letters.try_emplace("a", 0);
  rep.letters.try_emplace("b", 0);
  rep.roof_mean = tau_sum.value() / static_cast<double>(rep.steps);
  // Flow-time averages: sum f tau / sum tau over consecutive blocks.
  rep.observable_mean = tau_sum.value() > 0 ? f_tau.value() / tau_sum.value() : 0.0;
  for (std::size_t len : c.lengths) {
    std::uint64_t total = 0, beyond = 0;
    for (const auto& o : orbits)
      for (std::size_t s = 0; s + len <= o.f.size(); s += len) {
        CompensatedSum num, den;
        for (std::size_t i = s; i < s + len; ++i) {
          num.add(o.f[i] * o.tau[i]);
          den.add(o.tau[i]);
        }
        ++total;
        beyond += std::abs(num.value() / den.value() - rep.observable_mean) > c.eps;
      }
    rep.blocks.push_back(total);
    rep.deviation_mass.push_back(total ? static_cast<double>(beyond) / static_cast<double>(total) : 0.0);
  }
  // Roof variation on forward itinerary cylinders: points sharing the next k
  // letters, spread of log roof within each group, maximized over groups.
  const int K = c.holder_depth;
  std::vector<std::pair<std::vector<std::uint8_t>, double>> pts;
  const std::size_t per = std::max<std::size_t>(1, c.holder_points / orbits.size());
  for (const auto& o : orbits) {
    if (o.f.size() <= static_cast<std::size_t>(K)) continue;
    const std::size_t stride = std::max<std::size_t>(1, (o.f.size() - static_cast<std::size_t>(K)) / per);
    for (std::size_t i = 0; i + static_cast<std::size_t>(K) < o.f.size(); i += stride)
      pts.push_back({std::vector<std::uint8_t>(o.code.begin() + static_cast<std::ptrdiff_t>(i),
                                               o.code.begin() + static_cast<std::ptrdiff_t>(i) + K),
                     std::log(o.tau[i])});
  }
  std::vector<double> var(static_cast<std::size_t>(K) + 1, 0.0);
  for (int k = 0; k <= K; ++k) {
    std::map<std::vector<std::uint8_t>, std::pair<double, double>> groups;
    for (const auto& [code, lr] : pts) {
      std::vector<std::uint8_t> key(code.begin(), code.begin() + k);
      auto [it, fresh] = groups.try_emplace(std::move(key), lr, lr);
      if (!fresh) {
        it->second.first = std::min(it->second.first, lr);
        it->second.second = std::max(it->second.second, lr);
      }
    }
    for (const auto& [key, mm] : groups) var[static_cast<std::size_t>(k)] = std::max(var[static_cast<std::size_t>(k)], mm.second - mm.first);
  }
  rep.roof_holder = detail::fit_log_linear(var, 1);
  return rep;
}

}  // namespace zipflow
