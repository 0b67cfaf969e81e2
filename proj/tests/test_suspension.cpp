#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include <boost/math/quadrature/gauss.hpp>

#include "zipflow/stats.hpp"
#include "zipflow/suspension.hpp"
#include "zipflow/thermo.hpp"

using namespace zipflow;

namespace {

Observable random_roof_table(int L, int d, RandomStream& rng, double lo, double hi) {
  return Observable::tabulate(L, d, [&](const Word&) { return lo + (hi - lo) * rng.uniform(); });
}

FlowObservable random_pieces(int L, int d, RandomStream& rng, double horizon) {
  const auto n = checked_pow(static_cast<std::uint64_t>(L), static_cast<unsigned>(d));
  std::vector<std::vector<FiberPiece>> pieces(n);
  for (auto& list : pieces) {
    const int k = 1 + static_cast<int>(rng() % 3);
    for (int j = 0; j < k; ++j) {
      const double a = horizon * rng.uniform();
      const double b = rng.uniform() < 0.3 ? kInf : a + horizon * rng.uniform() + 1e-3;
      std::vector<double> c(1 + rng() % 4);
      for (double& x : c) x = 2.0 * rng.uniform() - 1.0;
      list.push_back({a, b, c});
    }
  }
  return FlowObservable(L, d, std::move(pieces));
}

Configuration random_base(int L, std::size_t len, RandomStream& rng) {
  Word w(len);
  for (auto& s : w) s = static_cast<Symbol>(rng() % static_cast<std::uint32_t>(L));
  return Configuration(L, std::move(w), 0, Extension::none);
}

// Walks the flow fiber by fiber and integrates with Gauss-Legendre between
// the roof crossings and the fiber breakpoints.
double direct_integral(const FlowObservable& phi, const Roof& r, const Configuration& x, double s, double T) {
  const int J = std::max(phi.depth(), r.depth());
  double left = T, h = s, total = 0.0;
  for (std::ptrdiff_t i = 0; left > 0.0; ++i) {
    const Word w = x.read(i, J);
    const double top = std::min(r(w), h + left);
    std::vector<double> cuts{h, top};
    if (phi.closed_form())
      for (const auto& p : phi.pieces()[phi.pattern(w)])
        for (double t : {p.t0, p.t1})
          if (t > h && t < top) cuts.push_back(t);
    std::sort(cuts.begin(), cuts.end());
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
      const double a = cuts[k], b = cuts[k + 1];
      if (b <= a) continue;
      // evaluate at interior nodes only so piece endpoints never matter
      total += boost::math::quadrature::gauss<double, 20>::integrate([&](double t) { return phi.value(w, t); }, a, b);
    }
    left -= top - h;
    h = 0.0;
  }
  return total;
}

}  // namespace

TEST(FiberPiece, ClosedFormIntegral) {
  const FiberPiece p{0.5, 2.0, {1.0, -2.0, 3.0}};
  const double exact = [&] {
    auto F = [](double t) { return t - t * t + t * t * t; };
    return F(2.0) - F(0.5);
  }();
  EXPECT_NEAR(p.integral(0.0, 5.0), exact, 1e-14);
  EXPECT_EQ(p.integral(3.0, 4.0), 0.0);
  EXPECT_NEAR(p.sup_abs(10.0), std::abs(p.value(2.0)), 1e-14);
}

TEST(Roof, RejectsBadLowerBound) {
  EXPECT_THROW(Roof(Observable(2, 1, {1.0, 2.0}), 1.5), ValidationError);
  EXPECT_THROW(Roof(Observable(2, 1, {0.0, 2.0})), ValidationError);
  EXPECT_NO_THROW(Roof(Observable(2, 1, {1.0, 2.0}), 0.5));
}

TEST(LapNumber, Examples) {
  const Roof one = Roof::constant(2, 1.0);
  const auto x = Configuration::periodic(2, {0, 1});
  EXPECT_EQ(lap_number(x, 0.5, 2.7, one), 3u);
  EXPECT_EQ(lap_number(x, 0.0, 0.0, one), 0u);

  const Roof two(Observable(2, 1, {1.0, 2.0}));
  EXPECT_EQ(lap_number(x, 0.0, 2.9, two), 1u);
  EXPECT_EQ(lap_number(x, 0.0, 3.0, two), 2u);
  EXPECT_EQ(lap_number(x, 0.5, 2.4, two), 1u);
  EXPECT_EQ(lap_number(x, 0.5, 2.5, two), 2u);
  EXPECT_THROW(lap_number(x, 0.0, -1.0, two), ValidationError);
}

TEST(FlowPoint, Semigroup) {
  RandomStream rng(17, 0);
  for (int c = 0; c < 300; ++c) {
    const Roof r(random_roof_table(3, 2, rng, 0.4, 2.0));
    const auto x = random_base(3, 200, rng);
    const SuspensionPoint z{x, rng.uniform() * detail::roof_at(r, x, 0) * 0.999};
    const double t1 = 20.0 * rng.uniform(), t2 = 20.0 * rng.uniform();
    const SuspensionPoint a = flow_point(flow_point(z, t1, r), t2, r);
    const SuspensionPoint b = flow_point(z, t1 + t2, r);
    ASSERT_EQ(a.base.origin(), b.base.origin());
    EXPECT_NEAR(a.s, b.s, 1e-9);
    EXPECT_GE(b.s, 0.0);
    EXPECT_LT(b.s, detail::roof_at(r, b.base, 0));
  }
}

TEST(FlowPoint, RejectsHeightOutsideFiber) {
  const Roof r(Observable(2, 1, {1.0, 2.0}));
  const auto x = Configuration::periodic(2, {0, 1});
  EXPECT_THROW(flow_point({x, 1.0}, 1.0, r), ValidationError);
  EXPECT_THROW(flow_point({x, -0.1}, 1.0, r), ValidationError);
}

TEST(PhiR, Examples) {
  const Roof r(Observable(2, 1, {1.0, 3.0}));
  const auto g = FlowObservable::fiber_constant(Observable(2, 1, {2.0, -1.0}));
  const Observable pr = phi_r_observable(g, r);
  EXPECT_DOUBLE_EQ(pr.at_index(0), 2.0);
  EXPECT_DOUBLE_EQ(pr.at_index(1), -3.0);

  std::vector<std::vector<FiberPiece>> ramp(2, {FiberPiece{0.0, kInf, {0.0, 1.0}}});
  const Observable half_sq = phi_r_observable(FlowObservable(2, 1, ramp), r);
  EXPECT_DOUBLE_EQ(half_sq.at_index(0), 0.5);
  EXPECT_DOUBLE_EQ(half_sq.at_index(1), 4.5);
}

TEST(FlowIntegral, MatchesDirectQuadrature) {
  RandomStream rng(2024, 1);
  for (int c = 0; c < 1000; ++c) {
    const int L = 2 + static_cast<int>(rng() % 2);
    const Roof r(random_roof_table(L, 1 + static_cast<int>(rng() % 2), rng, 0.5, 2.5));
    const FlowObservable phi = random_pieces(L, 1 + static_cast<int>(rng() % 2), rng, 2.5);
    const auto x = random_base(L, 160, rng);
    const double s = rng.uniform() * detail::roof_at(r, x, 0) * 0.999;
    const double T = 50.0 * rng.uniform();
    FlowIntegral got{};
    ASSERT_NO_THROW(got = flow_integral(phi, {x, s}, T, r)) << "case " << c;
    EXPECT_LE(std::abs(got.boundary), got.boundary_cap * (1 + 1e-12) + 1e-12);
    const double want = direct_integral(phi, r, x, s, T);
    ASSERT_NEAR(got.value, want, 1e-8 * std::max(1.0, std::abs(want))) << "case " << c;
  }
}

TEST(FlowIntegral, CallableObservable) {
  RandomStream rng(5, 5);
  const Roof r(Observable(2, 1, {0.7, 1.9}));
  const FlowObservable phi(2, 1, [](std::span<const Symbol> w, double t) { return w[0] ? std::sin(3 * t) : std::exp(-t); }, 1.0);
  for (int c = 0; c < 50; ++c) {
    const auto x = random_base(2, 100, rng);
    const double s = 0.5 * rng.uniform() * detail::roof_at(r, x, 0);
    const double T = 30.0 * rng.uniform();
    EXPECT_NEAR(flow_integral(phi, {x, s}, T, r).value, direct_integral(phi, r, x, s, T), 1e-8);
  }
}

TEST(Rho, ZeroObservable) {
  const Roof r(Observable(2, 1, {1.0, 2.0}));
  const auto zero = FlowObservable::fiber_constant(Observable::constant(2, 0.0));
  const RhoReport rep = rho(zero, r, 2.0);
  EXPECT_EQ(rep.rho_norm, 0.0);
  EXPECT_EQ(rep.c1, 0.0);
  EXPECT_EQ(rep.rho_r_max_abs, 0.0);
}

TEST(Rho, UnitRoofIntegralBounded) {
  RandomStream rng(8, 8);
  const Roof r = Roof::constant(2, 1.0);
  for (int c = 0; c < 50; ++c) {
    const FlowObservable phi = [&] {
      std::vector<std::vector<FiberPiece>> p(4);
      for (auto& list : p) list.push_back({0.0, 1.0, {2 * rng.uniform() - 1, 2 * rng.uniform() - 1}});
      return FlowObservable(2, 2, std::move(p));
    }();
    const RhoReport rep = rho(phi, r, 1.0);
    EXPECT_LE(rep.rho_norm, rep.rho_norm_bound + 1e-12);
    EXPECT_LT(rep.rho_r_max_abs, 1e-12);  // rho_r = phi_r (1 - r) vanishes
    const auto x = random_base(2, 120, rng);
    const double s = 0.999 * rng.uniform();
    const double I = flow_integral(rep.rho, {x, s}, 100.0 * rng.uniform(), r).value;
    EXPECT_LE(std::abs(I), rep.c1 + 1e-10);
  }
}

TEST(Rho, RejectsSupportBeyondBound) {
  const Roof r = Roof::constant(2, 2.0);
  std::vector<std::vector<FiberPiece>> p(2, {FiberPiece{0.0, kInf, {1.0}}});
  EXPECT_THROW(rho(FlowObservable(2, 1, p), r, 1.0), ValidationError);
}

TEST(MuR, HeightLawAndMarginal) {
  const auto mu = equilibrium_measure(Observable(2, 1, {std::log(0.5), std::log(0.5)}));
  const Roof r(Observable(2, 1, {1.0, 2.0}));
  MuRSampler sampler(mu, r);
  EXPECT_NEAR(sampler.mean_roof(), 1.5, 1e-12);
  RandomStream rng(99, 0);
  const std::size_t n = 20000;
  std::vector<double> heights;
  double ones = 0, hsum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const SuspensionPoint z = sampler.sample_point(rng, 8);
    heights.push_back(z.s);
    hsum += z.s;
    ones += z.base[0] == 1;
  }
  auto cdf = [](double h) { return h <= 1.0 ? h / 1.5 : (0.5 + 0.5 * std::min(h, 2.0)) / 1.5; };
  const double d = stats::ks_statistic(heights, cdf);
  EXPECT_LT(d, stats::ks_critical(n, 1e-3));
  EXPECT_NEAR(hsum / n, 1.25 / 1.5, 4 * std::sqrt(0.35 / n));
  EXPECT_NEAR(ones / n, 2.0 / 3.0, 4 * std::sqrt(2.0 / 9.0 / n));
}

TEST(MuR, ResampledBatchMarginal) {
  const auto mu = equilibrium_measure(Observable(2, 1, {std::log(0.5), std::log(0.5)}));
  const Roof r(Observable(2, 1, {1.0, 3.0}));
  RandomStream rng(3, 3);
  const ResampledBatch b = sample_mu_r_batch(mu, r, rng, 20000, 20000, 4);
  double ones = 0;
  for (const auto& z : b.points) ones += z.base[0] == 1;
  EXPECT_NEAR(ones / 20000, 0.75, 0.02);
  EXPECT_GT(b.ess, 10000);
  EXPECT_LE(b.ess, 20000);
}

TEST(Tail, GeometricRoof) {
  const std::vector<double> p{8.0 / 15, 4.0 / 15, 2.0 / 15, 1.0 / 15};
  Observable psi(4, 1, {std::log(p[0]), std::log(p[1]), std::log(p[2]), std::log(p[3])});
  const auto mu = equilibrium_measure(psi);
  const Roof r(Observable(4, 1, {1, 2, 3, 4}));
  const TailReport t = tail_estimate(mu, r, {0.5, 1.5, 2.5, 3.5, 4.5});
  const std::vector<double> want{1.0, 7.0 / 15, 3.0 / 15, 1.0 / 15, 0.0};
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(t.tail[i], want[i], 1e-12);
  EXPECT_TRUE(t.fitted);
  EXPECT_GT(t.eps0, 0.5);
  EXPECT_LT(t.eps0, 1.5);
  double c0 = 0;
  for (int a = 0; a < 4; ++a) c0 += p[a] * std::exp(t.eps0 * (a + 1));
  EXPECT_NEAR(t.c0, c0, 1e-12 * c0);
  EXPECT_TRUE(t.certified);
}

TEST(Tail, BoundedRoofFallsBack) {
  const auto mu = equilibrium_measure(Observable::constant(2, 0.0));
  const TailReport t = tail_estimate(mu, Roof::constant(2, 1.0), {0.5, 1.5}, 0.7);
  EXPECT_FALSE(t.fitted);
  EXPECT_EQ(t.eps0, 0.7);
  EXPECT_TRUE(t.certified);
}

TEST(LapNumber, LawOfLargeNumbers) {
  const auto mu = equilibrium_measure(Observable(2, 1, {std::log(0.5), std::log(0.5)}));
  const Roof r(Observable(2, 1, {1.0, 2.0}));
  MuRSampler sampler(mu, r);
  RandomStream rng(12, 0);
  const double T = 4000;
  double dev = 0;
  for (int i = 0; i < 500; ++i) {
    const SuspensionPoint z = sampler.sample_point(rng, 4000);
    dev += std::abs(static_cast<double>(lap_number(z.base, z.s, T, r)) / T - 1.0 / 1.5);
  }
  EXPECT_LT(dev / 500, 0.01);
}
