#include <gtest/gtest.h>

#include <finicode/models.hpp>

#include <cstdio>
#include <fstream>
#include <random>

using namespace finicode;

namespace {

std::mt19937_64 rng(2024);

StateSet random_nonempty(int q) {
  StateSet s = 0;
  while (s == 0) s = rng() & full_set(q);
  return s;
}

template <class M, class Gen>
void check_bounding(const M& m, int trials, Gen gen_noise) {
  constexpr int D = M::dim;
  const int q = m.num_states();
  for (int t = 0; t < trials; ++t) {
    std::vector<StateSet> sets(2 * D + 1);
    for (auto& s : sets) s = random_nonempty(q);
    std::vector<typename M::Noise> a(2 * D + 1);
    for (auto& x : a) x = gen_noise();
    const StateSet out = m.update_set(sets.data(), a.data());
    // every selection inside the sets maps inside the bound and singletons stay exact
    for (int rep = 0; rep < 8; ++rep) {
      std::vector<State> eta(2 * D + 1);
      std::vector<StateSet> single(2 * D + 1);
      for (int k = 0; k <= 2 * D; ++k) {
        std::vector<State> opts;
        for (int c = 0; c < q; ++c)
          if (sets[k] & singleton(static_cast<State>(c))) opts.push_back(static_cast<State>(c));
        eta[k] = opts[rng() % opts.size()];
        single[k] = singleton(eta[k]);
      }
      const State y = m.update(eta.data(), a.data());
      ASSERT_TRUE(out & singleton(y));
      ASSERT_EQ(m.update_set(single.data(), a.data()), singleton(y));
    }
  }
}

}  // namespace

TEST(Ising, ThresholdProbabilities) {
  IsingModel<2> zero(0.0);
  for (int k = -4; k <= 4; ++k) EXPECT_DOUBLE_EQ(static_cast<double>(zero.p(k)), 0.5);
  IsingModel<1> m(std::log(3.0) / 2);
  EXPECT_NEAR(static_cast<double>(m.p(1)), 0.75, 1e-15);
  // P(psi <= k) = p_k, the sentinel carries the rest
  const auto& psi = m.psi_distribution();
  ASSERT_EQ(psi.size(), 6u);
  for (int k = -2; k <= 2; ++k) EXPECT_NEAR(static_cast<double>(psi.cdf(k + 2)), static_cast<double>(m.p(k)), 1e-15);
  auto joint = m.noise_alphabet();
  double active = 0;
  for (std::uint32_t s = 0; s < joint.size(); ++s) active += m.decode_noise(s).coin ? joint.prob(s) : 0;
  EXPECT_NEAR(active, 0.5, 1e-15);
}

TEST(Ising, RuleAtThreshold) {
  IsingModel<2> m(0.3);
  using N = IsingModel<2>::Noise;
  std::vector<State> plus(5, 1);
  std::vector<N> a(5, N{0, 0});
  a[0] = N{1, static_cast<std::uint8_t>(4 + 4)};  // psi = 2d
  EXPECT_EQ(m.update(plus.data(), a.data()), 1);
  a[0].psi = 4 + 5;  // sentinel 2d+1
  EXPECT_EQ(m.update(plus.data(), a.data()), 0);
  a[0].psi = 8;
  a[1].coin = 1;  // active neighbor blocks the update
  std::vector<State> minus(5, 0);
  EXPECT_EQ(m.update(minus.data(), a.data()), 0);
}

TEST(Ising, BoundIsSoundAndExactOnSingletons) {
  IsingModel<2> m(0.4, 0.6);
  check_bounding(m, 3000, [&] {
    return IsingModel<2>::Noise{static_cast<std::uint8_t>(rng() % 3 == 0), static_cast<std::uint8_t>(rng() % 10)};
  });
  IsingModel<1> m1(0.2);
  check_bounding(m1, 1000, [&] {
    return IsingModel<1>::Noise{static_cast<std::uint8_t>(rng() % 2), static_cast<std::uint8_t>(rng() % 6)};
  });
}

TEST(Colorings, FirstFreeColor) {
  ColoringsModel<1> m(5);
  std::array<std::uint8_t, 3> pi{3, 1, 4};
  EXPECT_EQ(ColoringsModel<1>::first_free(0, pi), 3);
  StateSet all_but_4 = full_set(5) & ~singleton(4);
  // D = S \ {c} forces c
  std::array<std::uint8_t, 3> q1{0, 2, 4};
  EXPECT_EQ(ColoringsModel<1>::first_free(all_but_4 & (singleton(0) | singleton(2)), q1), 4);
  EXPECT_EQ(ColoringsModel<1>::first_free(singleton(3), pi), 1);
}

TEST(Colorings, ForcedColorForEveryPermutation) {
  // neighbors hold every color but c: g returns c whatever pi is
  ColoringsModel<2> m(5);
  std::vector<State> eta{0, 0, 1, 2, 3};
  using N = ColoringsModel<2>::Noise;
  for (const auto& [priv, p] : m.private_alphabet()) {
    std::vector<N> a(5);
    a[0] = priv;
    a[0].coin = 1;
    ASSERT_EQ(m.update(eta.data(), a.data()), 4);
  }
}

TEST(Colorings, FreeColorIsUniformOverAllPermutations) {
  // full permutations of S_6, independent of the prefix encoding
  const int q = 6;
  std::vector<int> perm(q);
  for (StateSet used : {StateSet{0}, singleton(2), singleton(0) | singleton(5), StateSet{0b1011}}) {
    std::vector<int> cnt(q, 0);
    std::iota(perm.begin(), perm.end(), 0);
    int total = 0;
    do {
      int c = -1;
      for (int x : perm)
        if (!(used & singleton(static_cast<State>(x)))) {
          c = x;
          break;
        }
      ++cnt[c];
      ++total;
    } while (std::next_permutation(perm.begin(), perm.end()));
    const int free = q - set_size(used);
    for (int c = 0; c < q; ++c) {
      if (used & singleton(static_cast<State>(c))) EXPECT_EQ(cnt[c], 0);
      else EXPECT_EQ(cnt[c] * free, total);
    }
  }
  // the prefix alphabet used by the model gives the same law
  ColoringsModel<1> m(q);
  for (StateSet used : {StateSet{0}, singleton(2), singleton(0) | singleton(5)}) {
    std::vector<double> law(q, 0);
    for (const auto& [priv, p] : m.private_alphabet()) law[ColoringsModel<1>::first_free(used, priv.prefix)] += p;
    const int free = q - set_size(used);
    for (int c = 0; c < q; ++c)
      EXPECT_NEAR(law[c], (used & singleton(static_cast<State>(c))) ? 0.0 : 1.0 / free, 1e-12);
  }
}

TEST(Colorings, PrefixRanksAreDistinct) {
  ColoringsModel<1> m(5);
  std::set<std::array<std::uint8_t, 3>> seen;
  for (std::uint64_t r = 0; r < 60; ++r) {
    auto p = m.unrank(r);
    EXPECT_NE(p[0], p[1]);
    EXPECT_NE(p[1], p[2]);
    EXPECT_NE(p[0], p[2]);
    seen.insert(p);
  }
  EXPECT_EQ(seen.size(), 60u);
  EXPECT_EQ(m.noise_alphabet().size(), 61u);
}

TEST(Colorings, SetRuleIsTheExactUnion) {
  // oracle: enumerate every neighbor selection and collect g
  auto check = [](auto m, int trials) {
    using M = decltype(m);
    constexpr int D = M::dim;
    const int q = m.num_states();
    for (int t = 0; t < trials; ++t) {
      std::vector<StateSet> sets(2 * D + 1);
      for (auto& s : sets) {
        s = random_nonempty(q);
        if (rng() % 3 == 0) s = singleton(static_cast<State>(rng() % q));
      }
      typename M::Noise a0;
      a0.coin = 1;
      a0.prefix = m.unrank(rng() % static_cast<std::uint64_t>(m.prefix_count()));
      std::vector<typename M::Noise> a(2 * D + 1);
      a[0] = a0;
      StateSet brute = 0;
      std::vector<State> eta(2 * D + 1, 0);
      std::function<void(int)> rec = [&](int k) {
        if (k > 2 * D) {
          brute |= singleton(m.update(eta.data(), a.data()));
          return;
        }
        for (int c = 0; c < q; ++c)
          if (sets[k] & singleton(static_cast<State>(c))) {
            eta[k] = static_cast<State>(c);
            rec(k + 1);
          }
      };
      rec(1);
      const StateSet got = m.update_set(sets.data(), a.data());
      ASSERT_EQ(got, brute);
      ASSERT_LE(set_size(got), 2 * D + 1);
    }
  };
  check(ColoringsModel<1>(5), 3000);
  check(ColoringsModel<2>(6), 3000);
  check(ColoringsModel<2>(24), 500);
}

TEST(Colorings, BoundIsSound) {
  ColoringsModel<2> m(7, 0.4);
  check_bounding(m, 2000, [&] {
    ColoringsModel<2>::Noise a;
    a.coin = rng() % 3 == 0;
    a.prefix = m.unrank(rng() % static_cast<std::uint64_t>(m.prefix_count()));
    return a;
  });
}

TEST(Colorings, Warnings) {
  EXPECT_FALSE(ColoringsModel<1>(8).warning().has_value());
  EXPECT_TRUE(ColoringsModel<2>(23).warning().has_value());
  EXPECT_FALSE(ColoringsModel<2>(24).warning().has_value());
  EXPECT_THROW(ColoringsModel<2>(4), DomainError);
}

TEST(HighNoise, ProductKernel) {
  std::vector<std::vector<double>> rows(16, std::vector<double>{0.3, 0.7});
  HighNoiseModel<2> m(2, rows);
  EXPECT_NEAR(m.gamma(), 1.0, 1e-15);
  using N = HighNoiseModel<2>::Noise;
  std::vector<StateSet> full(5, 3);
  std::vector<N> a(5, N{0, 0.0});
  a[0] = N{1, 0.999};
  EXPECT_TRUE(is_singleton(m.update_set(full.data(), a.data())));
  a[0].coin = 0;
  EXPECT_EQ(m.update_set(full.data(), a.data()), 3u);
}

TEST(HighNoise, IsingTableGamma) {
  const double beta = 0.05;
  auto m = HighNoiseModel<2>::ising(beta);
  const double expect = 2 * std::exp(-4 * beta) / (std::exp(4 * beta) + std::exp(-4 * beta));
  EXPECT_NEAR(m.gamma(), expect, 1e-12);
  EXPECT_GT(m.gamma(), 0.75);
  EXPECT_TRUE(m.high_noise());
  for (std::size_t xi = 0; xi < m.rows(); ++xi)
    for (int s = 0; s < 2; ++s)
      EXPECT_NEAR(m.gamma_s(s) + (1 - m.gamma()) * m.residual(xi, s), m.kernel(xi, s), 1e-12);
}

TEST(HighNoise, UpdateLawMatchesKernel) {
  // measure of {u : draw(xi,u) = s} equals P(s|xi)
  std::vector<std::vector<double>> rows;
  std::mt19937_64 g(5);
  for (int x = 0; x < 81; ++x) {
    std::vector<double> r(3);
    double tot = 0;
    for (auto& y : r) tot += (y = 0.2 + std::uniform_real_distribution<double>(0, 1)(g));
    for (auto& y : r) y /= tot;
    rows.push_back(r);
  }
  HighNoiseModel<2> m(3, rows);
  auto alpha = m.private_alphabet();
  for (std::size_t xi = 0; xi < m.rows(); ++xi) {
    std::vector<double> law(3, 0);
    for (const auto& [n, p] : alpha) law[m.draw(xi, n.u)] += p;
    for (int s = 0; s < 3; ++s) EXPECT_NEAR(law[s], m.kernel(xi, s), 1e-12);
  }
  check_bounding(m, 2000, [&] {
    return HighNoiseModel<2>::Noise{static_cast<std::uint8_t>(g() % 3 == 0),
                                    std::uniform_real_distribution<double>(0, 1)(g)};
  });
}

TEST(HighNoise, ZeroRowsAndRefusal) {
  std::vector<std::vector<double>> rows(4, std::vector<double>{0.5, 0.5});
  rows[2] = {0.0, 1.0};
  HighNoiseModel<1> m(2, rows);
  EXPECT_EQ(m.gamma_s(0), 0.0);
  EXPECT_NEAR(m.gamma(), 0.5, 1e-15);
  std::vector<std::vector<double>> bad{{1, 0}, {0, 1}, {1, 0}, {0, 1}};
  EXPECT_THROW(HighNoiseModel<1>(2, bad), DomainError);
  EXPECT_THROW(HighNoiseModel<1>(2, std::vector<std::vector<double>>(3, {0.5, 0.5})), DomainError);
}

TEST(HighNoise, CsvKernel) {
  const std::string path = testing::TempDir() + "kernel.csv";
  {
    std::ofstream out(path);
    out << "x1,x2,s,p\n";
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b) {
        const double p1 = 0.4 + 0.1 * (a + b);
        out << a << "," << b << ",0," << 1 - p1 << "\n" << a << "," << b << ",1," << p1 << "\n";
      }
  }
  auto m = HighNoiseModel<1>::from_csv(path, 2);
  EXPECT_NEAR(m.kernel(3, 1), 0.6, 1e-15);
  EXPECT_NEAR(m.gamma(), 0.4 + 0.4, 1e-15);
  std::remove(path.c_str());
}
