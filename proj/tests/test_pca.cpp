#include <gtest/gtest.h>

#include <finicode/models.hpp>

#include <random>

#include "toy_models.hpp"

using namespace finicode;

TEST(Sets, Basics) {
  EXPECT_TRUE(is_singleton(singleton(5)));
  EXPECT_FALSE(is_singleton(0));
  EXPECT_FALSE(is_singleton(0b101));
  EXPECT_EQ(only_element(singleton(7)), 7);
  EXPECT_EQ(set_size(full_set(5)), 5);
  EXPECT_EQ(full_set(64), ~StateSet{0});
  auto offs = star_offsets<2>();
  ASSERT_EQ(offs.size(), 5u);
  EXPECT_EQ(offs[0], (Site<2>{0, 0}));
  EXPECT_EQ(offs[1], (Site<2>{-1, 0}));
  EXPECT_EQ(offs[2], (Site<2>{1, 0}));
  EXPECT_EQ(offsets_reach<2>(offs), 1);
}

TEST(Evolve, ZeroStepsAndIdentity) {
  toy::Identity<2> id;
  auto dom = LatticeDomain<2>::torus(4);
  std::vector<State> cfg(16);
  for (std::size_t x = 0; x < cfg.size(); ++x) cfg[x] = static_cast<State>(x % 3);
  SpaceTimeRandomSource<2> src(1);
  EXPECT_EQ(evolve(id, dom, cfg, src, 0, 0).config, cfg);
  EXPECT_EQ(evolve(id, dom, cfg, src, 0, 7).config, cfg);
  EXPECT_THROW(evolve(id, LatticeDomain<2>::torus(2), std::vector<State>(4), src, 0, 1), DomainError);
}

TEST(Evolve, ColdIsingStaysOrdered) {
  IsingModel<2> m(10.0);
  auto dom = LatticeDomain<2>::torus(4);
  int kept = 0;
  const int trials = 10000;
  for (int s = 0; s < trials; ++s) {
    SpaceTimeRandomSource<2> src(s);
    auto out = evolve(m, dom, std::vector<State>(16, 1), src, 0, 1).config;
    kept += std::all_of(out.begin(), out.end(), [](State x) { return x == 1; });
  }
  EXPECT_GE(kept, 0.999 * trials);
}

TEST(Evolve, WindowCertifiedRadius) {
  IsingModel<1> m(0.3);
  auto w = LatticeDomain<1>::window(10);
  SpaceTimeRandomSource<1> src(3);
  auto r = evolve(m, w, std::vector<State>(w.size(), 0), src, 0, 4);
  EXPECT_EQ(r.certified_radius, 6);
  // sites in the certified region agree when the frozen boundary changes
  auto r2 = evolve(m, w, std::vector<State>(w.size(), 0), src, 0, 4, 1);
  for (std::size_t x = 0; x < w.size(); ++x)
    if (std::abs(w.site(x)[0]) <= r.certified_radius) {
      EXPECT_EQ(r.config[x], r2.config[x]);
    }
}

TEST(Cftp, ForgetfulModelCoalescesInOneStep) {
  toy::Forget<1> m;
  SpaceTimeRandomSource<1> src(4);
  for (int x = -5; x <= 5; ++x) EXPECT_EQ(coalescence_time(m, {x}, src), 1);
  toy::Single<2> one;
  EXPECT_EQ(coalescence_time(one, {0, 0}, SpaceTimeRandomSource<2>(4)), 0);
  toy::Identity<1> id;
  EXPECT_THROW(coalescence_time(id, {0}, src, 64), GuardExceeded);
}

TEST(Cftp, OutputIgnoresStartingState) {
  // every start at depth >= tau yields the cftp value
  IsingModel<2> m(0.3);
  auto dom = LatticeDomain<2>::torus(4);
  std::vector<Site<2>> all;
  for (std::size_t x = 0; x < dom.size(); ++x) all.push_back(dom.site(x));
  std::mt19937_64 g(1);
  for (int s = 0; s < 20; ++s) {
    SpaceTimeRandomSource<2> src(100 + s);
    auto r = cftp_sample(m, dom, all, src);
    ASSERT_EQ(r.tau.size(), all.size());
    int tau = *std::max_element(r.tau.begin(), r.tau.end());
    EXPECT_LE(tau, r.total_depth);
    for (int depth : {tau, tau + 3}) {
      for (int rep = 0; rep < 3; ++rep) {
        std::vector<State> start(dom.size());
        for (auto& x : start) x = static_cast<State>(g() & 1);
        if (rep == 0) std::fill(start.begin(), start.end(), 0);
        auto out = evolve(m, dom, start, src, -depth, depth).config;
        ASSERT_EQ(out, r.values);
      }
    }
  }
}

TEST(Cftp, ColoringsIgnoreStartingState) {
  ColoringsModel<1> m(5);
  auto dom = LatticeDomain<1>::torus(5);
  std::vector<Site<1>> all;
  for (std::size_t x = 0; x < dom.size(); ++x) all.push_back(dom.site(x));
  std::mt19937_64 g(2);
  for (int s = 0; s < 10; ++s) {
    SpaceTimeRandomSource<1> src(s);
    auto r = cftp_sample(m, dom, all, src);
    const int depth = *std::max_element(r.tau.begin(), r.tau.end());
    std::vector<State> start(dom.size());
    for (auto& x : start) x = static_cast<State>(g() % 5);
    EXPECT_EQ(evolve(m, dom, start, src, -depth, depth).config, r.values);
  }
}

TEST(Cftp, PerSiteDepthIsMinimal) {
  IsingModel<1> m(0.4);
  auto dom = LatticeDomain<1>::torus(7);
  std::vector<Site<1>> all;
  for (std::size_t x = 0; x < dom.size(); ++x) all.push_back(dom.site(x));
  for (int s = 0; s < 10; ++s) {
    SpaceTimeRandomSource<1> src(s);
    auto r = cftp_sample(m, dom, all, src);
    for (std::size_t k = 0; k < all.size(); ++k) {
      std::vector<StateSet> full(dom.size(), full_set(2));
      auto at = evolve_set(m, dom, full, src, -r.tau[k], r.tau[k]);
      EXPECT_TRUE(is_singleton(at[k]));
      if (r.tau[k] > 0) {
        auto before = evolve_set(m, dom, full, src, -(r.tau[k] - 1), r.tau[k] - 1);
        EXPECT_FALSE(is_singleton(before[k]));
      }
    }
  }
}

TEST(LightCone, MatchesWindowEvaluation) {
  // single-site depth from the cone agrees with cftp on a large enough window
  auto run = [](auto m, int seeds) {
    using M = decltype(m);
    constexpr int D = M::dim;
    for (int s = 0; s < seeds; ++s) {
      SpaceTimeRandomSource<D> src(7 * s + 1);
      const int t = coalescence_time(m, Site<D>{}, src);
      auto r = cftp_sample(m, LatticeDomain<D>::window(1), {Site<D>{}}, src);
      EXPECT_EQ(r.tau[0], t);
    }
  };
  run(IsingModel<1>(0.4), 30);
  run(IsingModel<2>(0.05), 3);
  run(ColoringsModel<1>(5), 20);
  run(HighNoiseModel<1>::ising(0.3), 20);
  run(HighNoiseModel<2>::ising(0.05), 3);
}

TEST(LightCone, SetsShrinkWithDepth) {
  IsingModel<2> m(0.25);
  for (int s = 0; s < 10; ++s) {
    SpaceTimeRandomSource<2> src(s);
    LightCone<IsingModel<2>> cone(m, [&](const Site<2>& u, int depth) { return m.noise(src, u, -depth); });
    StateSet prev = full_set(2);
    for (int t = 0; t <= 40; ++t) {
      const StateSet cur = cone.run(t);
      EXPECT_EQ(cur & prev, cur);
      prev = cur;
    }
  }
}

TEST(LightCone, IntervalChainSandwich) {
  // ordinary runs from all-minus and all-plus bracket every other start and stay inside the bound
  IsingModel<1> m(0.5);
  auto w = LatticeDomain<1>::window(30);
  std::mt19937_64 g(3);
  for (int s = 0; s < 20; ++s) {
    SpaceTimeRandomSource<1> src(s);
    std::vector<State> lo(w.size(), 0), hi(w.size(), 1), mid(w.size());
    for (auto& x : mid) x = static_cast<State>(g() & 1);
    const int steps = 10;
    auto a = evolve(m, w, lo, src, -steps, steps, 0).config;
    auto b = evolve(m, w, hi, src, -steps, steps, 1).config;
    auto c = evolve(m, w, mid, src, -steps, steps, static_cast<State>(g() & 1)).config;
    auto sets = evolve_set(m, w, std::vector<StateSet>(w.size(), 3), src, -steps, steps);
    for (std::size_t x = 0; x < w.size(); ++x) {
      EXPECT_LE(a[x], c[x]);
      EXPECT_LE(c[x], b[x]);
      EXPECT_TRUE(sets[x] & singleton(c[x]));
    }
  }
}
