#include <gtest/gtest.h>

#include <cmath>

#include "zipflow/thermo.hpp"

using namespace zipflow;

namespace {

Observable random_table(int L, int d, RandomStream& rng, double amp = 1.0) {
  return Observable::tabulate(L, d, [&](const Word&) { return amp * (2.0 * rng.uniform() - 1.0); });
}

const Observable kFair(2, 1, {std::log(0.5), std::log(0.5)});
const Observable kPm(2, 1, {-1.0, 1.0});

// Oracle: cylinder masses of the equilibrium state of a depth-2 potential from
// dense matrix powers, mu[w] ~ (1' M^N e_w0) prod M(w_i,w_i+1) (e_wn' M^N 1) / 1' M^{2N+n-1} 1.
double power_mass(const Observable& psi, const Word& w, int N = 80) {
  const int L = psi.alphabet();
  std::vector<std::vector<double>> M(L, std::vector<double>(L));
  for (int u = 0; u < L; ++u)
    for (int v = 0; v < L; ++v) M[u][v] = std::exp(psi.at_index(static_cast<std::uint64_t>(u * L + v)));
  auto apply_left = [&](std::vector<double> x, int times) {
    double logscale = 0;
    for (int t = 0; t < times; ++t) {
      std::vector<double> y(L, 0.0);
      for (int u = 0; u < L; ++u)
        for (int v = 0; v < L; ++v) y[v] += x[u] * M[u][v];
      double s = 0;
      for (double q : y) s += q;
      for (double& q : y) q /= s;
      logscale += std::log(s);
      x = y;
    }
    return std::make_pair(x, logscale);
  };
  auto [row, ls1] = apply_left(std::vector<double>(L, 1.0), N);
  // Mass of w relative to all words of the same length at the same position.
  double num = std::log(row[w[0]]) + ls1;
  for (std::size_t i = 0; i + 1 < w.size(); ++i) num += std::log(M[w[i]][w[i + 1]]);
  // Right tail: M^N 1 at w.back(), by symmetry through the transpose.
  std::vector<double> col(L, 1.0);
  double ls2 = 0;
  for (int t = 0; t < N; ++t) {
    std::vector<double> y(L, 0.0);
    for (int u = 0; u < L; ++u)
      for (int v = 0; v < L; ++v) y[u] += M[u][v] * col[v];
    double s = 0;
    for (double q : y) s += q;
    for (double& q : y) q /= s;
    ls2 += std::log(s);
    col = y;
  }
  num += std::log(col[w.back()]) + ls2;
  auto [all, ls3] = apply_left(std::vector<double>(L, 1.0), 2 * N + static_cast<int>(w.size()) - 1);
  double tot = 0;
  for (double q : all) tot += q;
  return std::exp(num - ls3 - std::log(tot));
}

// Oracle: sup{h + nu(psi) - P : |nu(phi)| >= eps} over two-state Markov
// chains (L = 2, depth-1 data) by grid search with local refinement.
double brute_constrained_sup(const Observable& psi, const Observable& phi, double P, double eps) {
  auto H = [](double p) { return p <= 0 || p >= 1 ? 0.0 : -p * std::log(p) - (1 - p) * std::log(1 - p); };
  auto value = [&](double p, double q, bool& ok) {
    // p = P(0 -> 1), q = P(1 -> 0)
    const double pi0 = q / (p + q), pi1 = 1 - pi0;
    const double mean = pi0 * phi.at_index(0) + pi1 * phi.at_index(1);
    ok = std::abs(mean) >= eps;
    return pi0 * H(p) + pi1 * H(q) + pi0 * psi.at_index(0) + pi1 * psi.at_index(1) - P;
  };
  double best = -kInf, bp = 0.5, bq = 0.5;
  const int G = 1500;
  for (int i = 1; i < G; ++i)
    for (int j = 1; j < G; ++j) {
      bool ok;
      const double v = value(i / double(G), j / double(G), ok);
      if (ok && v > best) best = v, bp = i / double(G), bq = j / double(G);
    }
  for (double h = 1.0 / G; h > 1e-9; h *= 0.5) {
    bool moved = true;
    while (moved) {
      moved = false;
      for (int di = -1; di <= 1; ++di)
        for (int dj = -1; dj <= 1; ++dj) {
          const double p = bp + di * h, q = bq + dj * h;
          if (p <= 0 || p >= 1 || q <= 0 || q >= 1) continue;
          bool ok;
          const double v = value(p, q, ok);
          if (ok && v > best + 1e-15) best = v, bp = p, bq = q, moved = true;
        }
    }
  }
  return best;
}

}  // namespace

TEST(TransferMatrix, Examples) {
  const auto M0 = transfer_matrix(Observable::constant(2, 0.0));
  EXPECT_EQ(M0.states(), 1u);
  EXPECT_DOUBLE_EQ(M0.dense()[0][0], 2.0);
  const Observable b(2, 1, {std::log(1.0 / 3), std::log(2.0 / 3)});
  const auto d = transfer_matrix(b, 1).dense();
  EXPECT_NEAR(d[0][0], 1.0 / 3, 1e-15);
  EXPECT_NEAR(d[1][0], 1.0 / 3, 1e-15);
  EXPECT_NEAR(d[0][1], 2.0 / 3, 1e-15);
  EXPECT_NEAR(d[1][1], 2.0 / 3, 1e-15);
  const auto pd = perron(transfer_matrix(b, 1));
  EXPECT_NEAR(pd.log_rho, 0.0, 1e-12);
}

TEST(Pressure, Exactness) {
  for (int L = 2; L <= 6; ++L) EXPECT_NEAR(pressure(Observable::constant(L, 0.0)), std::log(L), 1e-12);
  RandomStream rng(1, 0);
  for (int t = 0; t < 20; ++t) {
    const int L = 2 + t % 4;
    std::vector<double> p(L);
    double s = 0;
    for (double& x : p) s += x = rng.exponential();
    std::vector<double> tab;
    for (double x : p) tab.push_back(std::log(x / s));
    EXPECT_NEAR(pressure(Observable(L, 1, tab)), 0.0, 1e-12);
    const auto psi = random_table(L, 2, rng);
    EXPECT_NEAR(pressure(psi.plus(0.37)), pressure(psi) + 0.37, 1e-12);
  }
}

TEST(Pressure, MatchesDenseEigenvalue) {
  // 2x2 closed form for depth-2 potentials on two symbols.
  RandomStream rng(2, 0);
  for (int t = 0; t < 50; ++t) {
    const auto psi = random_table(2, 2, rng, 2.0);
    const auto m = transfer_matrix(psi).dense();
    const double tr = m[0][0] + m[1][1], det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    EXPECT_NEAR(pressure(psi), std::log(0.5 * (tr + std::sqrt(tr * tr - 4 * det))), 1e-12);
  }
}

TEST(Equilibrium, BernoulliCases) {
  const auto mu = equilibrium_measure(Observable::constant(3, 0.0));
  EXPECT_NEAR(mu.entropy(), std::log(3.0), 1e-12);
  EXPECT_NEAR(mu.gibbs_constant(), 1.0, 1e-9);
  const Observable b(2, 1, {std::log(1.0 / 3), std::log(2.0 / 3)});
  const auto nu = equilibrium_measure(b);
  EXPECT_NEAR(nu.cylinder_mass(Word{1, 1, 0}), 4.0 / 27, 1e-14);
  EXPECT_NEAR(nu.gibbs_constant(), 1.0, 1e-9);
  EXPECT_NEAR(nu.entropy(), std::log(3.0) / 3 + 2.0 / 3 * std::log(1.5), 1e-12);
  EXPECT_NEAR(std::abs(equilibrium_measure(kFair).integrate(kPm)), 0.0, 1e-15);
}

TEST(Equilibrium, DepthTwoAgainstMatrixPowers) {
  RandomStream rng(3, 0);
  for (int t = 0; t < 10; ++t) {
    const auto psi = random_table(2 + t % 2, 2, rng);
    const auto mu = equilibrium_measure(psi, 6);
    const auto [rows, stat] = mu.consistency();
    EXPECT_LT(rows, 1e-12);
    EXPECT_LT(stat, 1e-12);
    for (int k = 1; k <= 4; ++k) {
      const Word w = index_to_word(rng() % static_cast<std::uint32_t>(std::pow(psi.alphabet(), k)), psi.alphabet(), k);
      EXPECT_NEAR(mu.cylinder_mass(w), power_mass(psi, w), 1e-10);
    }
    // Variational identity and Gibbs sandwich with the computed constant.
    EXPECT_NEAR(mu.entropy() + mu.integrate(psi), mu.pressure(), 1e-9);
    EXPECT_GE(mu.gibbs_constant(), 1.0);
    EXPECT_LT(mu.gibbs_constant(), 1e3);
  }
}

TEST(Equilibrium, GibbsSandwichDirect) {
  RandomStream rng(4, 0);
  const auto psi = random_table(3, 2, rng);
  const auto mu = equilibrium_measure(psi, 5);
  const double K = mu.gibbs_constant();
  for (int k = 1; k <= 5; ++k)
    for (std::uint64_t i = 0; i < static_cast<std::uint64_t>(std::pow(3, k + 1)); ++i) {
      const Word y = index_to_word(i, 3, k + 1);
      const double ratio = mu.cylinder_mass(std::span<const Symbol>(y.data(), static_cast<std::size_t>(k))) /
                           std::exp(-mu.pressure() * k + birkhoff_sum(psi, y, static_cast<std::size_t>(k)));
      ASSERT_LE(ratio, K * (1 + 1e-12));
      ASSERT_GE(ratio, 1 / K * (1 - 1e-12));
    }
}

TEST(Equilibrium, VariationalGapNegative) {
  RandomStream rng(5, 0);
  const auto psi = random_table(2, 2, rng);
  const auto mu = equilibrium_measure(psi, 0);
  for (int t = 0; t < 100; ++t) {
    const auto nu = random_markov_measure(2, 1 + t % 2, rng);
    EXPECT_LT(nu.entropy() + nu.integrate(psi) - mu.pressure(), 0.0);
  }
}

TEST(PressureCurve, LogCosh) {
  const std::vector<double> grid{-2, -1, -0.5, 0, 0.25, 1, 3};
  const auto q = pressure_curve(kFair, kPm, grid);
  for (std::size_t i = 0; i < grid.size(); ++i) EXPECT_NEAR(q[i], std::log(std::cosh(grid[i])), 1e-12);
  const auto zero = pressure_curve(kFair, Observable::constant(2, 0.0), grid);
  for (double v : zero) EXPECT_NEAR(v, 0.0, 1e-14);
}

TEST(PressureCurve, ConvexWithMeanSlope) {
  RandomStream rng(6, 0);
  const auto psi = random_table(3, 2, rng), phi = random_table(3, 1, rng);
  std::vector<double> grid;
  for (int i = -20; i <= 20; ++i) grid.push_back(0.1 * i);
  const auto q = pressure_curve(psi, phi, grid);
  for (std::size_t i = 1; i + 1 < q.size(); ++i) EXPECT_GE(q[i - 1] + q[i + 1] - 2 * q[i], -1e-12);
  const double mean = equilibrium_measure(psi, 0).integrate(phi);
  const double h = 1e-4;
  const std::vector<double> hh{-h, h};
  const auto qq = pressure_curve(psi, phi, hh);
  EXPECT_NEAR((qq[1] - qq[0]) / (2 * h), mean, 1e-6);
  for (std::size_t i = 0; i < grid.size(); ++i) EXPECT_GE(q[i], grid[i] * mean - 1e-12);
}

TEST(RateFunction, KullbackLeibler) {
  const double kl = 0.75 * std::log(1.5) + 0.25 * std::log(0.5);
  EXPECT_NEAR(rate_function(kFair, kPm, 0.5).value, kl, 1e-6);
  EXPECT_NEAR(rate_function(kFair, kPm, 0.0).value, 0.0, 1e-12);
  EXPECT_EQ(rate_function(kFair, kPm, 1.5).status, RateStatus::outside);
  // Boundary: I(1) = log 2.
  const auto b = rate_function(kFair, kPm, 1.0);
  EXPECT_EQ(b.status, RateStatus::boundary);
  EXPECT_NEAR(b.value, std::log(2.0), 1e-9);
  double prev = 0;
  for (double s = 0.05; s < 0.95; s += 0.05) {
    const double v = rate_function(kFair, kPm, s).value;
    EXPECT_GT(v, prev);
    prev = v;
  }
}

TEST(DeviationBound, OracleAndMonotone) {
  const auto db = deviation_bound(kFair, kPm, 0.5);
  EXPECT_NEAR(db.value, -0.130812035941137, 1e-4);
  EXPECT_NEAR(db.value, brute_constrained_sup(kFair, kPm, 0.0, 0.5), 1e-4);
  EXPECT_EQ(deviation_bound(kFair, kPm, 0.0).value, 0.0);
  double prev = 0;
  for (double e = 0.1; e < 1.0; e += 0.1) {
    const double v = deviation_bound(kFair, kPm, e).value;
    EXPECT_LE(v, prev + 1e-12);
    prev = v;
  }
  // Strict and non-strict variants split only at the range endpoint.
  const auto edge = deviation_bound(kFair, kPm, 1.0);
  EXPECT_NEAR(edge.value, -std::log(2.0), 1e-9);
  EXPECT_EQ(edge.value_strict, -kInf);
}

TEST(DeviationBound, AsymmetricAgainstBruteForce) {
  const Observable psi(2, 1, {std::log(0.3), std::log(0.7)});
  const Observable phi(2, 1, {0.0, 1.0});  // mean 0.7 after centering
  for (double eps : {0.1, 0.2, 0.35}) {
    const auto db = deviation_bound(psi, phi, eps);
    const Observable centered = phi.plus(-0.7);
    EXPECT_NEAR(db.value, brute_constrained_sup(psi, centered, 0.0, eps), 1e-4) << eps;
  }
}

TEST(DeviationBound, DegenerateObservable) {
  const Observable g(2, 1, {0.2, -0.9});
  const auto db = deviation_bound(kFair, g.composed_with_shift() - g, 0.3);
  EXPECT_TRUE(db.degenerate);
  EXPECT_EQ(db.value, 0.0);
}

TEST(ExactDeviation, BinomialTail) {
  const auto mu = equilibrium_measure(kFair);
  const auto c = exact_deviation_probability(mu, kPm, 20, 0.5, false, true);
  EXPECT_EQ(c.hits, 43400u);
  EXPECT_EQ(c.total, 1048576u);
  const auto p = exact_deviation_probability(mu, kPm, 20, 0.5);
  EXPECT_NEAR(p.probability, 43400.0 / 1048576.0, 1e-15);
  EXPECT_LT(std::log(p.probability) / 20, deviation_bound(kFair, kPm, 0.5).value);
  EXPECT_EQ(exact_deviation_probability(mu, kPm, 20, 1.2).probability, 0.0);
  EXPECT_NEAR(exact_deviation_probability(mu, kPm, 20, 0.0).probability, 1.0, 1e-14);
  EXPECT_THROW(exact_deviation_probability(mu, kPm, 60, 0.5), ResourceError);
}

TEST(ExactDeviation, RateApproachesBound) {
  const auto mu = equilibrium_measure(kFair);
  // Small n overshoots the asymptotic bound (n = 4 gives -0.1175); from
  // n = 16 on the values sit below it and increase toward it.
  double prev = -kInf;
  for (std::size_t n : {16u, 20u, 24u}) {
    const double r = std::log(exact_deviation_probability(mu, kPm, n, 0.5).probability) / static_cast<double>(n);
    EXPECT_LE(r, -0.130812);
    EXPECT_GT(r, prev);
    prev = r;
  }
}

TEST(ExactDeviation, MarkovMatchesSampling) {
  RandomStream rng(7, 0);
  const auto psi = random_table(2, 2, rng);
  const auto mu = equilibrium_measure(psi, 0);
  const Observable phi = Observable(2, 2, {1.0, -0.5, 0.25, -1.0});
  const double p = exact_deviation_probability(mu, phi, 10, 0.3).probability;
  int hits = 0;
  const int N = 200000;
  Word w;
  for (int i = 0; i < N; ++i) {
    mu.sample_word(rng, w, 11);
    hits += std::abs(birkhoff_sum(phi, w, 10)) >= 3.0 - 1e-9;
  }
  EXPECT_NEAR(hits / double(N), p, 4 * std::sqrt(p * (1 - p) / N));
}
