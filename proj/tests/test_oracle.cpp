#include <gtest/gtest.h>

#include <finicode/models.hpp>
#include <finicode/oracle.hpp>

#include "toy_models.hpp"

using namespace finicode;

TEST(Gibbs, IsingZeroBetaIsUniform) {
  auto mu = gibbs_ising(Carrier::cycle(5), 0.0);
  for (double p : mu.p) EXPECT_NEAR(p, 1.0 / 32, 1e-15);
}

TEST(Gibbs, IsingFlipSymmetryAndEdgeLaw) {
  auto mu = gibbs_ising(Carrier::torus<2>(3), 0.37);
  const std::size_t n = mu.p.size();
  double tot = 0;
  for (std::size_t c = 0; c < n; ++c) {
    EXPECT_NEAR(mu.p[c], mu.p[n - 1 - c], 1e-15);
    tot += mu.p[c];
  }
  EXPECT_NEAR(tot, 1.0, 1e-12);
  // a single edge: P(equal) = e^b / (e^b + e^-b)
  auto e = gibbs_ising(Carrier::path(2), 0.5);
  EXPECT_NEAR(e.p[0] + e.p[3], std::exp(0.5) / (std::exp(0.5) + std::exp(-0.5)), 1e-14);
}

TEST(Gibbs, ColoringsCounts) {
  auto two = gibbs_colorings(Carrier::path(2), 3);
  int support = 0;
  for (double p : two.p)
    if (p > 0) {
      ++support;
      EXPECT_NEAR(p, 1.0 / 6, 1e-15);
    }
  EXPECT_EQ(support, 6);
  // proper colorings of C_4 with 8 colors: (q-1)^4 + (q-1) = 2408
  auto c4 = gibbs_colorings(Carrier::cycle(4), 8);
  support = 0;
  for (double p : c4.p) support += p > 0;
  EXPECT_EQ(support, 2408);
  EXPECT_THROW(gibbs_colorings(Carrier::path(2), 1), DomainError);
}

TEST(Gibbs, ColoringsRelabelSymmetry) {
  auto mu = gibbs_colorings(Carrier::cycle(5), 4);
  const int perm[4] = {2, 0, 3, 1};
  for (std::size_t c = 0; c < mu.p.size(); ++c) {
    auto x = mu.decode(c);
    for (int& v : x) v = perm[v];
    EXPECT_NEAR(mu.p[c], mu.p[ExactDistribution::encode(x, 4)], 1e-15);
  }
}

TEST(Marginal, SumsOut) {
  auto mu = gibbs_ising(Carrier::cycle(4), 0.2);
  auto m = mu.marginal({2, 0});
  ASSERT_EQ(m.p.size(), 4u);
  double tot = 0;
  for (double p : m.p) tot += p;
  EXPECT_NEAR(tot, 1.0, 1e-14);
  EXPECT_NEAR(m.p[1], m.p[2], 1e-15);
}

TEST(Kernel, IdentityAndForget) {
  auto k = pca_kernel(toy::Identity<1>{}, 3);
  ASSERT_EQ(k.size(), 27u);
  for (std::size_t a = 0; a < k.size(); ++a)
    for (std::size_t b = 0; b < k.size(); ++b) EXPECT_NEAR(k[a][b], a == b ? 1.0 : 0.0, 1e-15);
  auto f = pca_kernel(toy::Forget<1>{}, 3);
  for (const auto& row : f)
    for (double p : row) EXPECT_NEAR(p, 1.0 / 27, 1e-15);
}

TEST(Kernel, RowsAreStochastic) {
  auto check = [](const std::vector<std::vector<double>>& k) {
    for (const auto& row : k) {
      double s = 0;
      for (double p : row) {
        EXPECT_GE(p, 0.0);
        s += p;
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  };
  check(pca_kernel(IsingModel<1>(0.7), 5));
  check(pca_kernel(ColoringsModel<1>(4), 4));
  check(pca_kernel(HighNoiseModel<2>::ising(0.1), 3));
}

TEST(Kernel, FactorisedEqualsExhaustive) {
  IsingModel<1> m(0.3, 0.4);
  auto a = pca_kernel(m, 4);
  auto b = pca_kernel_exhaustive(m, 4);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t r = 0; r < a.size(); ++r) EXPECT_LT(max_abs_diff(a[r], b[r]), 1e-12);
  toy::Forget<1> f;
  auto c = pca_kernel(f, 3);
  auto d = pca_kernel_exhaustive(f, 3);
  for (std::size_t r = 0; r < c.size(); ++r) EXPECT_LT(max_abs_diff(c[r], d[r]), 1e-12);
}

TEST(Kernel, IsingGibbsIsStationary) {
  for (double beta : {0.1, 0.5}) {
    IsingModel<1> m(beta);
    auto mu = gibbs_ising(Carrier::cycle(5), beta);
    EXPECT_LT(max_abs_diff(apply_kernel(m, 5, mu.p), mu.p), 1e-12);
  }
  IsingModel<2> m2(0.3);
  auto mu2 = gibbs_ising(Carrier::torus<2>(3), 0.3);
  EXPECT_LT(max_abs_diff(apply_kernel(m2, 3, mu2.p), mu2.p), 1e-12);
}

TEST(Kernel, ColoringsGibbsIsStationary) {
  ColoringsModel<1> m(5);
  auto mu = gibbs_colorings(Carrier::cycle(4), 5);
  EXPECT_LT(max_abs_diff(apply_kernel(m, 4, mu.p), mu.p), 1e-12);
}

TEST(Distance, TvExamples) {
  EXPECT_NEAR(tv_distance({0.5, 0.5}, {0.75, 0.25}), 0.25, 1e-15);
  EXPECT_NEAR(tv_distance({1, 0}, {0, 1}), 1.0, 1e-15);
  Histogram<std::size_t> h{{0, 3}, {1, 1}};
  EXPECT_NEAR(tv_to_exact(h, {0.5, 0.5}), 0.25, 1e-15);
  Histogram<int> a{{0, 1}, {5, 1}}, b{{5, 2}};
  EXPECT_NEAR(tv_empirical(a, b), 0.5, 1e-15);
  auto k = pca_kernel(toy::Identity<1>{}, 3);
  std::vector<double> mu(27, 1.0 / 27);
  EXPECT_LT(max_abs_diff(left_multiply(mu, k), mu), 1e-15);
}

TEST(Bands, ExactBandScalesLikeRootN) {
  std::vector<double> p{0.25, 0.25, 0.5};
  auto small = tv_band_exact(p, 1000, 500, 3);
  auto big = tv_band_exact(p, 100000, 500, 3);
  EXPECT_GT(small.hi, big.hi);
  EXPECT_NEAR(small.hi / big.hi, 10.0, 3.0);
  EXPECT_TRUE(small.contains(0.0));
  EXPECT_FALSE(small.contains(0.5));
  EXPECT_LT(small.p_value(1.0), 0.01);
  EXPECT_GT(small.p_value(0.0), 0.99);
}

TEST(Bands, TwoSampleCoversSameLaw) {
  std::mt19937_64 g(9);
  std::discrete_distribution<int> law{1, 2, 3, 4};
  int covered = 0;
  for (int rep = 0; rep < 20; ++rep) {
    Histogram<int> a, b;
    for (int k = 0; k < 5000; ++k) {
      ++a[law(g)];
      ++b[law(g)];
    }
    covered += tv_band_two_sample(a, b, 300, rep).contains(tv_empirical(a, b));
  }
  EXPECT_GE(covered, 18);
}

TEST(Tails, GeometricSlope) {
  std::mt19937_64 g(4);
  std::geometric_distribution<int> geo(0.5);
  std::vector<int> xs(200000);
  for (int& x : xs) x = geo(g);
  auto t = fit_tails(xs);
  ASSERT_TRUE(t.exponential.applicable);
  EXPECT_NEAR(t.exponential.slope / -std::log(2.0), 1.0, 0.1);
  EXPECT_NEAR(t.survival[0], 0.5, 0.01);
  EXPECT_EQ(t.quantile(0.5), 0.0);
  auto flat = fit_tails(std::vector<int>(1000, 3));
  EXPECT_FALSE(flat.exponential.applicable);
  EXPECT_FALSE(flat.stretched.applicable);
}
