#pragma once

#include <bit>
#include <concepts>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "randomness.hpp"
#include "spacetime.hpp"

namespace finicode {

using State = std::uint8_t;
using StateSet = std::uint64_t;

struct GuardExceeded : Error {
  using Error::Error;
};

inline StateSet singleton(State s) { return StateSet{1} << s; }
inline StateSet full_set(int num_states) {
  return num_states >= 64 ? ~StateSet{0} : (StateSet{1} << num_states) - 1;
}
inline bool is_singleton(StateSet s) { return s != 0 && (s & (s - 1)) == 0; }
inline State only_element(StateSet s) { return static_cast<State>(std::countr_zero(s)); }
inline int set_size(StateSet s) { return std::popcount(s); }

/// Offsets N(0) ∪ {0}: center first, then -e_k, +e_k for each axis.
template <int D>
std::vector<Site<D>> star_offsets() {
  std::vector<Site<D>> out{Site<D>{}};
  for (int k = 0; k < D; ++k) {
    out.push_back(unit<D>(k, -1));
    out.push_back(unit<D>(k, +1));
  }
  return out;
}

template <int D>
int offsets_reach(const std::vector<Site<D>>& offs) {
  int r = 0;
  for (const auto& o : offs) r = std::max(r, l1_norm<D>(o));
  return r;
}

/**
 * A PCA model: local rule f(eta|F, W|F') and its set-valued bound.
 * update() and update_set() receive the state and noise values at the model's offsets, in order.
 */
template <class M>
concept PcaModel = requires(const M& m, const State* s, const StateSet* ss, const typename M::Noise* a,
                            const SpaceTimeRandomSource<M::dim>& src, const Site<M::dim>& v, int t) {
  typename M::Noise;
  { M::dim } -> std::convertible_to<int>;
  { m.num_states() } -> std::convertible_to<int>;
  { m.state_offsets() } -> std::convertible_to<const std::vector<Site<M::dim>>&>;
  { m.noise_offsets() } -> std::convertible_to<const std::vector<Site<M::dim>>&>;
  { m.noise(src, v, t) } -> std::same_as<typename M::Noise>;
  { m.update(s, a) } -> std::same_as<State>;
  { m.update_set(ss, a) } -> std::same_as<StateSet>;
};

/// Models whose noise takes finitely many values, each encoded as one symbol.
template <class M>
concept FiniteNoiseModel = PcaModel<M> && requires(const M& m, std::uint32_t k) {
  { m.noise_alphabet() } -> std::convertible_to<AlphabetDistribution>;
  { m.decode_noise(k) } -> std::same_as<typename M::Noise>;
};

template <PcaModel M>
int model_reach(const M& m) {
  return std::max(offsets_reach<M::dim>(m.state_offsets()), offsets_reach<M::dim>(m.noise_offsets()));
}

/// Neighbor tables for a finite domain; -1 marks positions outside a window.
template <int D>
struct DomainTables {
  LatticeDomain<D> domain;
  std::vector<int> state_nbr;  // size * |F|
  std::vector<int> noise_nbr;  // size * |F'|
  std::size_t fs, fn;

  DomainTables(LatticeDomain<D> dom, const std::vector<Site<D>>& f, const std::vector<Site<D>>& fp)
      : domain(dom), fs(f.size()), fn(fp.size()) {
    const int reach = std::max(offsets_reach<D>(f), offsets_reach<D>(fp));
    if (dom.mode() == LatticeDomain<D>::Mode::torus && dom.side() < 2 * reach + 1)
      throw DomainError("torus side must be at least 2*reach+1");
    const std::size_t n = dom.size();
    state_nbr.resize(n * fs);
    noise_nbr.resize(n * fn);
    for (std::size_t x = 0; x < n; ++x) {
      const Site<D> s = dom.site(x);
      for (std::size_t k = 0; k < fs; ++k) {
        const Site<D> y = s + f[k];
        state_nbr[x * fs + k] = dom.inside(y) ? static_cast<int>(dom.index(y)) : -1;
      }
      for (std::size_t k = 0; k < fn; ++k) {
        const Site<D> y = s + fp[k];
        noise_nbr[x * fn + k] = dom.inside(y) ? static_cast<int>(dom.index(y)) : -1;
      }
    }
  }
};

/// One synchronous step on a finite domain. Window mode treats outside states as `boundary`.
template <PcaModel M>
std::vector<State> step(const M& m, const DomainTables<M::dim>& tab, const std::vector<State>& cur,
                        const SpaceTimeRandomSource<M::dim>& src, int t, State boundary = 0) {
  constexpr int D = M::dim;
  const std::size_t n = tab.domain.size();
  std::vector<typename M::Noise> noise(n);
  for (std::size_t x = 0; x < n; ++x) noise[x] = m.noise(src, tab.domain.site(x), t);
  std::vector<State> next(n);
  std::vector<State> s(tab.fs);
  std::vector<typename M::Noise> a(tab.fn);
  for (std::size_t x = 0; x < n; ++x) {
    const Site<D> v = tab.domain.site(x);
    for (std::size_t k = 0; k < tab.fs; ++k) {
      const int y = tab.state_nbr[x * tab.fs + k];
      s[k] = y < 0 ? boundary : cur[y];
    }
    for (std::size_t k = 0; k < tab.fn; ++k) {
      const int y = tab.noise_nbr[x * tab.fn + k];
      a[k] = y < 0 ? m.noise(src, v + m.noise_offsets()[k], t) : noise[y];
    }
    next[x] = m.update(s.data(), a.data());
  }
  return next;
}

/// One synchronous step of the bounding chain. Window mode treats outside states as unknown.
template <PcaModel M>
std::vector<StateSet> step_set(const M& m, const DomainTables<M::dim>& tab, const std::vector<StateSet>& cur,
                               const SpaceTimeRandomSource<M::dim>& src, int t) {
  constexpr int D = M::dim;
  const std::size_t n = tab.domain.size();
  const StateSet all = full_set(m.num_states());
  std::vector<typename M::Noise> noise(n);
  for (std::size_t x = 0; x < n; ++x) noise[x] = m.noise(src, tab.domain.site(x), t);
  std::vector<StateSet> next(n);
  std::vector<StateSet> s(tab.fs);
  std::vector<typename M::Noise> a(tab.fn);
  for (std::size_t x = 0; x < n; ++x) {
    const Site<D> v = tab.domain.site(x);
    for (std::size_t k = 0; k < tab.fs; ++k) {
      const int y = tab.state_nbr[x * tab.fs + k];
      s[k] = y < 0 ? all : cur[y];
    }
    for (std::size_t k = 0; k < tab.fn; ++k) {
      const int y = tab.noise_nbr[x * tab.fn + k];
      a[k] = y < 0 ? m.noise(src, v + m.noise_offsets()[k], t) : noise[y];
    }
    next[x] = m.update_set(s.data(), a.data());
  }
  return next;
}

template <int D>
struct EvolveResult {
  std::vector<State> config;
  /// Sites with |v|_inf <= certified_radius are unaffected by the frozen boundary (window mode).
  int certified_radius;
};

/// Runs the chain from time t_from for `steps` steps.
template <PcaModel M>
EvolveResult<M::dim> evolve(const M& m, const LatticeDomain<M::dim>& dom, std::vector<State> config,
                            const SpaceTimeRandomSource<M::dim>& src, int t_from, int steps, State boundary = 0) {
  DomainTables<M::dim> tab(dom, m.state_offsets(), m.noise_offsets());
  if (config.size() != dom.size()) throw DomainError("configuration size does not match domain");
  for (int k = 0; k < steps; ++k) config = step(m, tab, config, src, t_from + k, boundary);
  int cert = dom.mode() == LatticeDomain<M::dim>::Mode::torus ? dom.side() : dom.radius() - model_reach(m) * steps;
  return {std::move(config), cert};
}

template <PcaModel M>
std::vector<StateSet> evolve_set(const M& m, const LatticeDomain<M::dim>& dom, std::vector<StateSet> sets,
                                 const SpaceTimeRandomSource<M::dim>& src, int t_from, int steps) {
  DomainTables<M::dim> tab(dom, m.state_offsets(), m.noise_offsets());
  if (sets.size() != dom.size()) throw DomainError("configuration size does not match domain");
  for (int k = 0; k < steps; ++k) sets = step_set(m, tab, sets, src, t_from + k);
  return sets;
}

template <int D>
using StartSet = std::function<StateSet(const Site<D>&)>;

struct CftpOptions {
  int guard = 1 << 14;
  bool refine_depths = true;
};

template <int D>
struct CftpResult {
  std::vector<Site<D>> sites;
  std::vector<State> values;
  /// Per-site coalescence depth; empty when refinement was not requested.
  std::vector<int> tau;
  int total_depth = 0;
};

namespace detail {

template <PcaModel M>
struct CftpFrame {
  LatticeDomain<M::dim> dom;
  std::vector<std::size_t> region_idx;
};

template <PcaModel M>
CftpFrame<M> cftp_frame(const M& m, const LatticeDomain<M::dim>& dom, const std::vector<Site<M::dim>>& region,
                        int t) {
  constexpr int D = M::dim;
  if (dom.mode() == LatticeDomain<D>::Mode::torus) {
    CftpFrame<M> f{dom, {}};
    for (const auto& s : region) f.region_idx.push_back(dom.index(s));
    return f;
  }
  int rad = 0;
  for (const auto& s : region)
    for (int k = 0; k < D; ++k) rad = std::max(rad, std::abs(s[k]));
  auto box = LatticeDomain<D>::window(rad + model_reach(m) * t);
  CftpFrame<M> f{box, {}};
  for (const auto& s : region) f.region_idx.push_back(box.index(s));
  return f;
}

template <PcaModel M>
std::vector<StateSet> run_from(const M& m, const CftpFrame<M>& f, const SpaceTimeRandomSource<M::dim>& src, int t,
                               const StartSet<M::dim>& start) {
  std::vector<StateSet> sets(f.dom.size());
  for (std::size_t x = 0; x < sets.size(); ++x)
    sets[x] = start ? start(f.dom.site(x)) : full_set(m.num_states());
  return evolve_set(m, f.dom, std::move(sets), src, -t, t);
}

}  // namespace detail

/**
 * Coupling from the past on a torus, or on the infinite lattice restricted to `region` when the
 * domain is a window. Depth doubles until every region site is a singleton at time 0.
 */
template <PcaModel M>
CftpResult<M::dim> cftp_sample(const M& m, const LatticeDomain<M::dim>& dom, const std::vector<Site<M::dim>>& region,
                               const SpaceTimeRandomSource<M::dim>& src, const CftpOptions& opt = {},
                               const StartSet<M::dim>& start = {}) {
  constexpr int D = M::dim;
  auto coalesced = [&](int t) {
    auto f = detail::cftp_frame(m, dom, region, t);
    auto sets = detail::run_from(m, f, src, t, start);
    std::vector<StateSet> out;
    for (auto x : f.region_idx) out.push_back(sets[x]);
    return out;
  };
  for (int t = 1;; t *= 2) {
    if (t > opt.guard) throw GuardExceeded("cftp: no coalescence within guard " + std::to_string(opt.guard));
    auto sets = coalesced(t);
    bool all = true;
    for (auto s : sets) all = all && is_singleton(s);
    if (!all) continue;
    CftpResult<D> r;
    r.sites = region;
    r.total_depth = t;
    for (auto s : sets) r.values.push_back(only_element(s));
    if (opt.refine_depths) {
      std::map<int, std::vector<StateSet>> memo;
      memo[t] = sets;
      auto at = [&](int d) -> const std::vector<StateSet>& {
        auto it = memo.find(d);
        if (it == memo.end()) it = memo.emplace(d, coalesced(d)).first;
        return it->second;
      };
      for (std::size_t k = 0; k < region.size(); ++k) {
        int lo = 0, hi = t;
        while (hi - lo > 1) {
          int mid = (lo + hi) / 2;
          if (is_singleton(at(mid)[k])) hi = mid;
          else lo = mid;
        }
        r.tau.push_back(hi);
      }
    }
    return r;
  }
}

/**
 * Light-cone evaluator for the bounding chain at one site of the infinite lattice.
 *
 * Going from depth t to time 0 only sites with |u| <= reach*(remaining steps) matter, so the
 * update region shrinks each step. Noise values are cached per (depth, site) and reused across
 * calls with different starting depths.
 */
template <PcaModel M>
class LightCone {
  static constexpr int D = M::dim;
  using Noise = typename M::Noise;

 public:
  using NoiseAt = std::function<Noise(const Site<D>&, int)>;  // (offset u, depth i) -> W_{v+u,-i}

  LightCone(const M& m, NoiseAt noise_at) : m_(m), noise_at_(std::move(noise_at)), reach_(model_reach(m)) {}

  /// Set at the origin at time 0 after running from depth t from `start`.
  StateSet run(int t, const StartSet<D>& start = {}) {
    if (t == 0) return start ? start(Site<D>{}) : full_set(m_.num_states());
    grow(reach_ * t);
    const StateSet all = full_set(m_.num_states());
    std::size_t n_all = count_within(reach_ * t);
    cur_.assign(n_all, all);
    if (start)
      for (std::size_t x = 0; x < n_all; ++x) cur_[x] = start(sites_[x]);
    next_.resize(n_all);
    std::vector<StateSet> s(fs_);
    std::vector<Noise> a(fn_);
    for (int depth = t; depth >= 1; --depth) {
      const auto& nz = noise_layer(depth);
      const std::size_t upd = count_within(reach_ * (depth - 1));
      for (std::size_t x = 0; x < upd; ++x) {
        for (std::size_t k = 0; k < fs_; ++k) s[k] = cur_[state_nbr_[x * fs_ + k]];
        for (std::size_t k = 0; k < fn_; ++k) a[k] = nz[noise_nbr_[x * fn_ + k]];
        next_[x] = m_.update_set(s.data(), a.data());
      }
      for (std::size_t x = 0; x < upd; ++x) cur_[x] = next_[x];
    }
    return cur_[0];
  }

  /// Least t <= guard with a singleton at the origin, by doubling then bisection.
  std::optional<int> coalescence_time(int guard, const StartSet<D>& start = {}) {
    if (is_singleton(run(0, start))) return 0;
    if (guard < 1) return std::nullopt;
    int hi = 1;
    while (!is_singleton(run(hi, start))) {
      if (hi >= guard) return std::nullopt;
      hi = std::min(2 * hi, guard);
    }
    int lo = hi / 2;
    if (lo == 0) return hi;
    while (hi - lo > 1) {
      int mid = (lo + hi) / 2;
      if (is_singleton(run(mid, start))) hi = mid;
      else lo = mid;
    }
    return hi;
  }

  const std::vector<Site<D>>& sites() const { return sites_; }

 private:
  std::size_t count_within(int r) const { return r < static_cast<int>(counts_.size()) ? counts_[r] : sites_.size(); }

  void grow(int r) {
    if (r <= radius_) return;
    radius_ = std::max(r, 2 * std::max(radius_, 1));
    sites_.clear();
    for (int q = 0; q <= radius_ + reach_; ++q)
      for (const auto& s : l1_ball<D>(q))
        if (l1_norm<D>(s) == q) sites_.push_back(s);
    counts_.assign(radius_ + reach_ + 1, 0);
    for (const auto& s : sites_) ++counts_[l1_norm<D>(s)];
    for (std::size_t q = 1; q < counts_.size(); ++q) counts_[q] += counts_[q - 1];
    std::unordered_map<Site<D>, int, SiteHash<D>> rank;
    for (std::size_t x = 0; x < sites_.size(); ++x) rank.emplace(sites_[x], static_cast<int>(x));
    const auto& f = m_.state_offsets();
    const auto& fp = m_.noise_offsets();
    fs_ = f.size();
    fn_ = fp.size();
    const std::size_t inner = counts_[radius_];
    state_nbr_.assign(inner * fs_, 0);
    noise_nbr_.assign(inner * fn_, 0);
    for (std::size_t x = 0; x < inner; ++x) {
      for (std::size_t k = 0; k < fs_; ++k) state_nbr_[x * fs_ + k] = rank.at(sites_[x] + f[k]);
      for (std::size_t k = 0; k < fn_; ++k) noise_nbr_[x * fn_ + k] = rank.at(sites_[x] + fp[k]);
    }
  }

  const std::vector<Noise>& noise_layer(int depth) {
    if (static_cast<int>(noise_.size()) <= depth) noise_.resize(depth + 1);
    auto& layer = noise_[depth];
    const std::size_t need = count_within(reach_ * depth);
    while (layer.size() < need) layer.push_back(noise_at_(sites_[layer.size()], depth));
    return layer;
  }

  const M& m_;
  NoiseAt noise_at_;
  int reach_;
  int radius_ = -1;
  std::size_t fs_ = 0, fn_ = 0;
  std::vector<Site<D>> sites_;
  std::vector<std::size_t> counts_;
  std::vector<int> state_nbr_, noise_nbr_;
  std::vector<std::vector<Noise>> noise_;
  std::vector<StateSet> cur_, next_;
};

/// Coalescence time of the bounding chain at v on the infinite lattice.
template <PcaModel M>
int coalescence_time(const M& m, const Site<M::dim>& v, const SpaceTimeRandomSource<M::dim>& src,
                     int guard = 1 << 14, const StartSet<M::dim>& start = {}) {
  LightCone<M> cone(m, [&](const Site<M::dim>& u, int depth) { return m.noise(src, v + u, -depth); });
  StartSet<M::dim> shifted;
  if (start) shifted = [&](const Site<M::dim>& u) { return start(v + u); };
  auto t = cone.coalescence_time(guard, shifted);
  if (!t) throw GuardExceeded("coalescence_time: guard " + std::to_string(guard) + " exceeded");
  return *t;
}

}  // namespace finicode
