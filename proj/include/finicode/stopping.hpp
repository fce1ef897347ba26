#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <type_traits>
#include <unordered_map>
#include <vector>

#include "pca.hpp"
#include "randomness.hpp"
#include "spacetime.hpp"

namespace finicode {

using Symbol = std::uint32_t;

/// Read access to a configuration over some B_n, addressed by offsets (u, i) relative to the vertex.
template <int D>
struct PrefixView {
  virtual ~PrefixView() = default;
  virtual Symbol at(const Cell<D>& offset) const = 0;
};

/// Symbols X_{v+u,i} read straight from a source.
template <int D>
class SourceView final : public PrefixView<D> {
 public:
  SourceView(const SpaceTimeRandomSource<D>& src, const Site<D>& v) : src_(src), v_(v) {}
  Symbol at(const Cell<D>& c) const override { return src_.draw(v_ + c.u, c.i); }

 private:
  const SpaceTimeRandomSource<D>& src_;
  Site<D> v_;
};

/// Configuration stored in rank order of the window sequence.
template <int D>
class RankedView final : public PrefixView<D> {
 public:
  RankedView(OrderedPrefix<D>& order, const std::vector<Symbol>& values) : order_(order), values_(values) {}
  Symbol at(const Cell<D>& c) const override {
    auto r = order_.rank_of(c);
    if (!r || *r >= values_.size()) throw DomainError("view: offset outside the stored window");
    return values_[*r];
  }

 private:
  OrderedPrefix<D>& order_;
  const std::vector<Symbol>& values_;
};

/// Any callable (offset) -> symbol.
template <int D>
class FunctionView final : public PrefixView<D> {
 public:
  explicit FunctionView(std::function<Symbol(const Cell<D>&)> f) : f_(std::move(f)) {}
  Symbol at(const Cell<D>& c) const override { return f_(c); }

 private:
  std::function<Symbol(const Cell<D>&)> f_;
};

/**
 * A stopping time for the filtration of the windows v + B_n.
 *
 * stops_at(x, n) is asked only after stops_at(x, k) failed for every k < n, may read x on B_n
 * only, and answers whether the rule stops at n. The optional first_stop finds the least such
 * n <= limit directly; it must agree with the scan.
 */
template <int D>
struct StoppingRule {
  std::string name;
  WindowSequence<D> windows;
  std::function<bool(const PrefixView<D>&, int)> stops_at;
  std::function<std::optional<int>(const PrefixView<D>&, int)> first_stop;
  /// Declared bound m with the rule certain to stop by m (required for source rules).
  std::optional<int> bound;

  bool simple() const { return windows.kind() == WindowKind::simple; }
};

/// Value of the rule on a configuration over B_n: the stop value, or nullopt for *.
template <int D>
std::optional<int> evaluate(const StoppingRule<D>& rule, const PrefixView<D>& x, int n) {
  if (n < 0) throw DomainError("evaluate: negative prefix size");
  if (n > rule.windows.n_max()) throw DomainError("evaluate: prefix beyond the declared windows");
  if (rule.first_stop) {
    auto t = rule.first_stop(x, n);
    if (t && *t > n) throw DomainError("rule " + rule.name + ": fast path read beyond the prefix");
    return t;
  }
  for (int k = 0; k <= n; ++k) {
    if (rule.stops_at(x, k)) return k;
    if (rule.bound && k >= *rule.bound) throw DomainError("rule " + rule.name + " exceeded its declared bound");
  }
  return std::nullopt;
}

/// X^tau at one vertex: stop value and the configuration over v + B_t in rank order.
template <int D>
struct StoppedSample {
  int t = 0;
  std::vector<Symbol> values;
};

/// Reveals windows around v until the rule stops.
template <int D>
StoppedSample<D> sample_stopped(const StoppingRule<D>& rule, const SpaceTimeRandomSource<D>& src,
                                const std::type_identity_t<Site<D>>& v,
                                int guard) {
  if (guard < 1) throw DomainError("sample_stopped: guard must be at least 1");
  SourceView<D> x(src, v);
  std::optional<int> t;
  if (rule.first_stop) {
    t = rule.first_stop(x, std::min(guard, rule.windows.n_max()));
  } else {
    for (int k = 0; k <= std::min(guard, rule.windows.n_max()); ++k) {
      if (rule.stops_at(x, k)) {
        t = k;
        break;
      }
      if (rule.bound && k >= *rule.bound) throw DomainError("rule " + rule.name + " exceeded its declared bound");
    }
  }
  if (!t) throw GuardExceeded("sample_stopped: rule " + rule.name + " did not stop within guard");
  StoppedSample<D> s{*t, {}};
  for (const auto& c : rule.windows.window(*t)) s.values.push_back(x.at(c));
  return s;
}

namespace rules {

/// sigma = M - 1 on simple windows.
template <int D>
StoppingRule<D> deterministic(int M) {
  if (M < 1) throw DomainError("deterministic rule needs M >= 1");
  StoppingRule<D> r{"deterministic", WindowSequence<D>::simple(), {}, {}, M - 1};
  r.stops_at = [M](const PrefixView<D>&, int n) { return n == M - 1; };
  return r;
}

/// Stop at the first n with X_{0,n} = s0; at `cap` at the latest when cap >= 0.
template <int D>
StoppingRule<D> first_hit(WindowSequence<D> windows, Symbol s0, int cap = -1) {
  const int top = cap >= 0 ? std::min(cap, windows.n_max()) : windows.n_max();
  for (int n = 0; n <= std::min(top, 64); ++n)
    if (!windows.contains(n, Cell<D>{Site<D>{}, n})) throw DomainError("first-hit rule needs (0,n) in B_n");
  StoppingRule<D> r{"first_hit", std::move(windows), {}, {}, std::nullopt};
  if (cap >= 0) r.bound = cap;
  r.stops_at = [s0, cap](const PrefixView<D>& x, int n) {
    return x.at(Cell<D>{Site<D>{}, n}) == s0 || n == cap;
  };
  return r;
}

/// Stop at the first n whose layer B_n minus B_{n-1} holds s0 everywhere.
template <int D>
StoppingRule<D> layer_homogeneity(WindowSequence<D> windows, Symbol s0, int cap = -1) {
  StoppingRule<D> r{"layer_homogeneity", windows, {}, {}, std::nullopt};
  if (cap >= 0) r.bound = cap;
  r.stops_at = [windows, s0, cap](const PrefixView<D>& x, int n) {
    if (n == cap) return true;
    for (const auto& c : windows.layer(n))
      if (x.at(c) != s0) return false;
    return true;
  };
  return r;
}

/**
 * Coalescence depth of the bounding chain at the vertex, on cone windows of the model's reach.
 * Symbol X_{u,i} is the model's noise at (v+u, -i) through decode_noise; layer 0 is never read.
 */
template <FiniteNoiseModel M>
StoppingRule<M::dim> pca_coalescence(const M& model) {
  constexpr int D = M::dim;
  const int reach = model_reach(model);
  StoppingRule<D> r{"pca_coalescence", WindowSequence<D>::cone(reach), {}, {}, std::nullopt};
  auto cone_for = [model](const PrefixView<D>& x) {
    return LightCone<M>(model, [&x, model](const Site<D>& u, int depth) {
      return model.decode_noise(x.at(Cell<D>{u, depth}));
    });
  };
  r.stops_at = [cone_for](const PrefixView<D>& x, int n) {
    auto cone = cone_for(x);
    return is_singleton(cone.run(n));
  };
  r.first_stop = [cone_for](const PrefixView<D>& x, int limit) {
    auto cone = cone_for(x);
    return cone.coalescence_time(limit);
  };
  return r;
}

/// Time-0 state at the vertex once the coalescence rule has stopped at t.
template <FiniteNoiseModel M>
State coalesced_value(const M& model, const PrefixView<M::dim>& x, int t) {
  constexpr int D = M::dim;
  LightCone<M> cone(model, [&x, &model](const Site<D>& u, int depth) {
    return model.decode_noise(x.at(Cell<D>{u, depth}));
  });
  const StateSet s = cone.run(t);
  if (!is_singleton(s)) throw DomainError("coalesced_value: no coalescence at the given depth");
  return only_element(s);
}

}  // namespace rules

enum class Verdict { satisfied, violated, inconclusive };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::satisfied: return "satisfied";
    case Verdict::violated: return "violated";
    case Verdict::inconclusive: return "inconclusive";
  }
  return "?";
}

struct Requirement {
  double window_mean = 0, window_se = 0;  // E|B_tau|
  double pile_mean = 0, pile_se = 0;      // E sigma + 1
  double margin_z = 3;
  Verdict verdict = Verdict::inconclusive;
  /// 2 * ceil(E|B_tau|): the deterministic pile height suggested for sigma = M - 1.
  int suggested_M() const { return 2 * static_cast<int>(std::ceil(window_mean)); }
};

/**
 * Monte Carlo check of E|B_tau| < E sigma + 1 from independent substreams. The verdict is
 * satisfied only when the gap exceeds margin_z standard errors.
 */
template <int D>
Requirement estimate_requirement(const StoppingRule<D>& tau, const StoppingRule<D>& sigma,
                                 const SpaceTimeRandomSource<D>& src, int n_samples, int guard = 1 << 14,
                                 double margin_z = 3) {
  if (n_samples < 1000) throw DomainError("estimate_requirement: at least 1000 samples are required");
  if (!sigma.simple()) throw DomainError("estimate_requirement: sigma must use simple windows");
  auto moments = [n_samples](const std::vector<double>& xs) {
    double m = 0;
    for (double x : xs) m += x;
    m /= n_samples;
    double v = 0;
    for (double x : xs) v += (x - m) * (x - m);
    v /= std::max(1, n_samples - 1);
    return std::pair{m, std::sqrt(v / n_samples)};
  };
  std::vector<double> a, b;
  for (int k = 0; k < n_samples; ++k) {
    auto s = sample_stopped(tau, src.substream(2 * static_cast<std::uint64_t>(k)), Site<D>{}, guard);
    a.push_back(static_cast<double>(tau.windows.size(s.t)));
    auto p = sample_stopped(sigma, src.substream(2 * static_cast<std::uint64_t>(k) + 1), Site<D>{}, guard);
    b.push_back(static_cast<double>(p.t + 1));
  }
  Requirement r;
  std::tie(r.window_mean, r.window_se) = moments(a);
  std::tie(r.pile_mean, r.pile_se) = moments(b);
  r.margin_z = margin_z;
  const double gap = r.pile_mean - r.window_mean;
  const double se = std::hypot(r.window_se, r.pile_se);
  if (gap > margin_z * se && gap > 0) r.verdict = Verdict::satisfied;
  else if (gap < -margin_z * se && gap < 0) r.verdict = Verdict::violated;
  else r.verdict = Verdict::inconclusive;
  return r;
}

}  // namespace finicode
