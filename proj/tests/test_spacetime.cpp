#include <gtest/gtest.h>

#include <finicode/spacetime.hpp>


using namespace finicode;

namespace {

template <int D>
std::vector<Cell<D>> brute_cone(int delta, int n) {
  std::vector<Cell<D>> out;
  const int r = delta * n;
  Site<D> u{};
  std::function<void(int)> rec = [&](int k) {
    if (k == D) {
      for (int i = 0; i <= n; ++i)
        if (l1_norm<D>(u) <= delta * i) out.push_back({u, i});
      return;
    }
    for (int x = -r; x <= r; ++x) {
      u[k] = x;
      rec(k + 1);
    }
  };
  rec(0);
  return out;
}

template <int D>
bool strictly_ordered(const WindowSequence<D>& seq, const std::vector<Cell<D>>& cells) {
  for (std::size_t k = 1; k < cells.size(); ++k) {
    int la = *seq.first_layer(cells[k - 1]), lb = *seq.first_layer(cells[k]);
    if (la > lb) return false;
    if (la == lb && !layer_less<D>(cells[k - 1], cells[k])) return false;
  }
  return true;
}

}  // namespace

TEST(Window, ConeD1Examples) {
  auto seq = WindowSequence<1>::cone(1);
  auto b0 = seq.window(0);
  ASSERT_EQ(b0.size(), 1u);
  EXPECT_EQ(b0[0], (Cell<1>{{0}, 0}));
  auto b1 = seq.window(1);
  std::vector<Cell<1>> expect{{{0}, 0}, {{-1}, 1}, {{0}, 1}, {{1}, 1}};
  EXPECT_EQ(b1, expect);
}

TEST(Window, SimpleExamples) {
  auto seq = WindowSequence<2>::simple();
  std::vector<Cell<2>> expect{{{0, 0}, 0}, {{0, 0}, 1}, {{0, 0}, 2}};
  EXPECT_EQ(seq.window(2), expect);
  EXPECT_EQ(seq.successor({{0, 0}, 0}), (Cell<2>{{0, 0}, 1}));
}

TEST(Window, ConeSuccessors) {
  auto seq = WindowSequence<1>::cone(1);
  EXPECT_EQ(seq.successor({{0}, 0}), (Cell<1>{{-1}, 1}));
  EXPECT_EQ(seq.successor({{1}, 1}), (Cell<1>{{-2}, 2}));
  EXPECT_THROW(seq.successor({{3}, 1}), DomainError);
}

TEST(Window, ConeMatchesBruteForce) {
  for (int delta = 1; delta <= 2; ++delta)
    for (int n = 0; n <= 4; ++n) {
      auto seq1 = WindowSequence<1>::cone(delta);
      auto a = seq1.window(n);
      auto b = brute_cone<1>(delta, n);
      EXPECT_EQ(a.size(), b.size());
      EXPECT_EQ(seq1.size(n), b.size());
      auto seq2 = WindowSequence<2>::cone(delta);
      EXPECT_EQ(seq2.window(n).size(), brute_cone<2>(delta, n).size());
      EXPECT_EQ(seq2.size(n), brute_cone<2>(delta, n).size());
      for (const auto& c : b) EXPECT_TRUE(seq1.contains(n, c));
    }
  // |B_n| = (n+1)^2 in d=1 with reach 1
  auto seq = WindowSequence<1>::cone(1);
  for (int n = 0; n < 10; ++n) EXPECT_EQ(seq.size(n), static_cast<std::size_t>((n + 1) * (n + 1)));
}

TEST(Window, CubeMembershipAndSizes) {
  auto seq = WindowSequence<2>::cube(1);
  // {|u| <= 2, 0 <= i <= 2}: 13 sites times 3 levels
  EXPECT_EQ(seq.window(2).size(), 39u);
  EXPECT_EQ(seq.size(2), 39u);
  for (const auto& c : seq.window(3)) {
    EXPECT_LE(l1_norm<2>(c.u), 3);
    EXPECT_LE(c.i, 3);
  }
  EXPECT_EQ(*seq.first_layer({{2, 0}, 0}), 2);
  EXPECT_EQ(*seq.first_layer({{0, 0}, 3}), 3);
}

TEST(Window, OrderIsTotalAndSuccessorWalksIt) {
  auto check = [](auto seq, int n) {
    auto w = seq.window(n);
    EXPECT_TRUE(strictly_ordered(seq, w));
    auto c = w.front();
    for (std::size_t k = 1; k < w.size(); ++k) {
      c = seq.successor(c);
      EXPECT_EQ(c, w[k]);
    }
  };
  check(WindowSequence<1>::cone(1), 6);
  check(WindowSequence<2>::cone(1), 4);
  check(WindowSequence<2>::cube(2), 3);
  check(WindowSequence<3>::cone(1), 3);
  check(WindowSequence<1>::simple(), 5);
}

TEST(Window, Linearity) {
  EXPECT_TRUE(linearity_check(WindowSequence<1>::cone(2), 2, 100));
  EXPECT_TRUE(linearity_check(WindowSequence<2>::cube(2), 2, 10));
  auto far = WindowSequence<1>::custom({{{{0}, 0}}, {{{3}, 1}}}, 1);
  EXPECT_FALSE(linearity_check(far, 1, 1));
}

TEST(Window, CustomValidation) {
  auto seq = WindowSequence<1>::custom({{{{0}, 0}}, {{{0}, 1}, {{1}, 1}}}, 1);
  EXPECT_EQ(seq.window(1).size(), 3u);
  EXPECT_THROW(seq.window(2), DomainError);
  EXPECT_THROW(WindowSequence<1>::custom({{{{1}, 0}}}, 1), DomainError);
  EXPECT_THROW(WindowSequence<1>::custom({{{{0}, 0}}, {}}, 1), DomainError);
  EXPECT_THROW(WindowSequence<1>::custom({{{{0}, 0}}, {{{0}, 0}}}, 1), DomainError);
}

TEST(Window, OrderedPrefixAgreesWithWindows) {
  OrderedPrefix<2> pre(WindowSequence<2>::cone(1));
  auto w = pre.windows().window(4);
  for (std::size_t r = 0; r < w.size(); ++r) {
    EXPECT_EQ(pre.at(r), w[r]);
    EXPECT_EQ(*pre.rank_of(w[r]), r);
    EXPECT_EQ(pre.layer_of(r), *pre.windows().first_layer(w[r]));
  }
  EXPECT_EQ(pre.layer_start(2), pre.windows().size(1));
  EXPECT_FALSE(pre.rank_of({{5, 0}, 1}).has_value());
}

TEST(Domain, TorusWrapAndRoundTrip) {
  auto t = LatticeDomain<2>::torus(4);
  EXPECT_EQ(t.size(), 16u);
  for (std::size_t x = 0; x < t.size(); ++x) EXPECT_EQ(t.index(t.site(x)), x);
  EXPECT_EQ(t.index({-1, 0}), t.index({3, 0}));
  auto box = LatticeDomain<1>::periodic_box(3);
  EXPECT_EQ(box.site(0), (Site<1>{-3}));
  EXPECT_EQ(box.index({4}), box.index({-3}));
  auto w = LatticeDomain<1>::window(2);
  EXPECT_THROW(w.index({3}), DomainError);
  EXPECT_FALSE(w.inside({-3}));
}

TEST(Geometry, BallSizes) {
  // |{u in Z^2 : |u|_1 <= r}| = 2r^2 + 2r + 1
  for (int r = 0; r < 6; ++r) EXPECT_EQ(l1_ball<2>(r).size(), static_cast<std::size_t>(2 * r * r + 2 * r + 1));
  for (int r = 0; r < 6; ++r) EXPECT_EQ(l1_ball<1>(r).size(), static_cast<std::size_t>(2 * r + 1));
  auto b = l1_ball<3>(2);
  EXPECT_TRUE(std::is_sorted(b.begin(), b.end()));
  EXPECT_EQ(b.size(), 25u);
}
