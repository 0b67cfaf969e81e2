#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "zipflow/rauzy.hpp"

using namespace zipflow;

namespace {

Permutation P(std::vector<int> v) { return Permutation(std::move(v)); }

// Hand-rolled generator: random irreducible permutations of size m.
Permutation random_irreducible(int m, std::mt19937_64& g) {
  std::vector<int> v(static_cast<std::size_t>(m));
  std::iota(v.begin(), v.end(), 1);
  for (;;) {
    std::shuffle(v.begin(), v.end(), g);
    Permutation p(v);
    if (is_irreducible(p)) return p;
  }
}

// Independent cofactor-expansion determinant.
long long cofactor_det(const std::vector<std::vector<long long>>& a) {
  const std::size_t n = a.size();
  if (n == 1) return a[0][0];
  long long d = 0;
  for (std::size_t j = 0; j < n; ++j) {
    std::vector<std::vector<long long>> minor;
    for (std::size_t i = 1; i < n; ++i) {
      std::vector<long long> row;
      for (std::size_t c = 0; c < n; ++c)
        if (c != j) row.push_back(a[i][c]);
      minor.push_back(row);
    }
    d += (j % 2 ? -1 : 1) * a[0][j] * cofactor_det(minor);
  }
  return d;
}

}  // namespace

TEST(Permutation, RejectsNonBijection) {
  EXPECT_THROW(P({1, 1}), ValidationError);
  EXPECT_THROW(P({0, 1}), ValidationError);
  EXPECT_THROW(Permutation::parse("3,x,1"), ValidationError);
  EXPECT_EQ(Permutation::parse("3,2,1"), P({3, 2, 1}));
  EXPECT_EQ(Permutation::parse("(3 2 1)"), P({3, 2, 1}));
}

TEST(Irreducible, SmallCases) {
  EXPECT_TRUE(is_irreducible(P({2, 1})));
  EXPECT_FALSE(is_irreducible(P({1, 2})));
  EXPECT_TRUE(is_irreducible(P({2, 3, 1})));
  EXPECT_FALSE(is_irreducible(P({2, 1, 3})));
}

TEST(RauzyOps, HandEvaluated) {
  EXPECT_EQ(rauzy_a(P({2, 1})), P({2, 1}));
  EXPECT_EQ(rauzy_a(P({3, 2, 1})), P({3, 1, 2}));
  EXPECT_EQ(rauzy_a(P({2, 3, 1})), P({2, 3, 1}));
  EXPECT_EQ(rauzy_b(P({2, 1})), P({2, 1}));
  EXPECT_EQ(rauzy_b(P({3, 2, 1})), P({2, 3, 1}));
  EXPECT_EQ(rauzy_b(P({3, 1, 2})), P({3, 1, 2}));
  EXPECT_THROW(rauzy_a(P({1, 2})), ValidationError);
}

TEST(RauzyMatrices, HandEvaluated) {
  EXPECT_EQ(matrix_b(P({2, 1})).rows(), (std::vector<std::vector<std::int64_t>>{{1, 0}, {1, 1}}));
  const IntMatrix a = matrix_a(P({3, 2, 1}));
  EXPECT_EQ(a.rows(), (std::vector<std::vector<std::int64_t>>{{1, 1, 0}, {0, 0, 1}, {0, 1, 0}}));
  EXPECT_EQ(a.determinant(), -1);
  IntMatrix b = IntMatrix::identity(3);
  b(2, 0) = 1;
  EXPECT_EQ(matrix_b(P({3, 2, 1})), b);
  EXPECT_EQ(matrix_b(P({3, 2, 1})).determinant(), 1);
}

TEST(RauzyClass, ThreeTwoOne) {
  const RauzyClass c = rauzy_class(P({3, 2, 1}));
  ASSERT_EQ(c.members.size(), 3u);
  EXPECT_TRUE(c.contains(P({3, 2, 1})));
  EXPECT_TRUE(c.contains(P({3, 1, 2})));
  EXPECT_TRUE(c.contains(P({2, 3, 1})));
  EXPECT_EQ(c.edges.size(), 6u);
}

TEST(RauzyClass, TwoOneSelfLoops) {
  const RauzyClass c = rauzy_class(P({2, 1}));
  ASSERT_EQ(c.members.size(), 1u);
  for (const auto& e : c.edges) EXPECT_EQ(e.target, 0u);
}

TEST(RauzyClass, CapAndReducible) {
  EXPECT_THROW(rauzy_class(P({2, 1, 3})), ValidationError);
  EXPECT_THROW(rauzy_class(P({4, 3, 2, 1}), 2), ResourceError);
}

TEST(RauzyClass, PropertiesOnRandomStarts) {
  std::mt19937_64 g(17);
  for (int trial = 0; trial < 30; ++trial) {
    const int m = 2 + trial % 5;
    const Permutation p = random_irreducible(m, g);
    const RauzyClass c = rauzy_class(p);
    for (const auto& e : c.edges) {
      const Permutation& s = c.members[e.source];
      const Permutation t = rauzy_move(s, e.label);
      ASSERT_TRUE(is_irreducible(t));
      ASSERT_EQ(c.members[e.target], t);
      const auto det = e.matrix.determinant();
      ASSERT_TRUE(det == 1 || det == -1);
      std::vector<std::vector<long long>> rows;
      for (const auto& r : e.matrix.rows()) rows.emplace_back(r.begin(), r.end());
      ASSERT_EQ(cofactor_det(rows), det);
      ASSERT_EQ(e.matrix * e.matrix.inverse_unimodular(), IntMatrix::identity(m));
    }
    // Same set from any member.
    const Permutation other = c.members[c.members.size() / 2];
    auto a = c.members, b = rauzy_class(other).members;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    ASSERT_EQ(a, b);
  }
}

TEST(IntMatrix, DeterminantAgreesWithCofactors) {
  std::mt19937_64 g(3);
  std::uniform_int_distribution<int> val(-4, 4);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + trial % 5;
    IntMatrix m(n);
    std::vector<std::vector<long long>> rows(static_cast<std::size_t>(n), std::vector<long long>(static_cast<std::size_t>(n)));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) rows[i][j] = m(i, j) = val(g);
    ASSERT_EQ(m.determinant(), cofactor_det(rows));
  }
}
