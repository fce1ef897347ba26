#pragma once

#include <algorithm>
#include <chrono>
#include <climits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "stopping.hpp"

namespace finicode {

/// A: both sides see X at the source cell. B: both see X at the target cell.
enum class UpdateMethod { A, B };

inline const char* to_string(UpdateMethod m) { return m == UpdateMethod::A ? "A" : "B"; }

struct InvariantViolation : Error {
  using Error::Error;
};

/// One simulator after some step. Source U = v + k e_1 at height I; target v + order[rank].
struct SimState {
  int k = 0;
  int I = -1;
  std::uint32_t rank = 0;
  bool T = false;
  std::uint8_t step_case = 0;  // 1..4 after a step, 0 initially
};

struct Violation {
  int step;
  std::string what;
};

template <int D>
struct VertexOutput {
  Site<D> v{};
  int N = -1;    // first step at which v is satisfied
  int tau = -1;  // tau_v(Z)
  std::vector<Symbol> values;  // Z over v + B_tau in rank order
  int radius = 0;              // 5 Delta N^2
  bool certified = false;
  int footprint = -1;          // farthest X read from v, when tracked
};

/// Linear growth constant used for certification; the bound needs Delta >= 1.
template <int D>
int coding_delta(const WindowSequence<D>& w) {
  return std::max(1, w.delta());
}

/// Radius of X that determines every simulator output settled by step n.
inline long long certify_locality(int n, int delta) { return 5LL * delta * n * n; }

struct CodingOptions {
  UpdateMethod method = UpdateMethod::A;
  bool check_invariants = true;
  bool exhaustive = false;  // also re-check earlier targets and satisfied vertices
  int exhaustive_every = 1;  // ... on steps divisible by this
  bool throw_on_violation = false;
  bool keep_ledger = false;
  std::size_t keep = 64;  // violations stored verbatim; the rest are only counted
  std::ostream* trace = nullptr;
  int trace_radius = 0;
};

template <int D>
struct ReadRecord {
  Site<D> v;
  Cell<D> source;
  Cell<D> target;
  int step;
  bool transported;
};

namespace detail {

template <int D>
Site<D> shift1(Site<D> v, int k) {
  v[0] += k;
  return v;
}

template <int D>
std::string fmt_site(const Site<D>& v) {
  std::ostringstream o;
  for (int a = 0; a < D; ++a) o << (a ? ";" : "") << v[a];
  return o.str();
}

inline const std::uint32_t kEmpty = 0xffffffffu;

}  // namespace detail

/**
 * Every simulator of a periodic box [-rho, rho]^D advanced in lockstep.
 *
 * The box is the infinite algorithm run on rho-periodic input; vertices with
 * |v|_1 + 5 Delta N_v^2 <= rho coincide with the infinite-lattice run and are reported as
 * certified. Every case iv climb reveals a fresh input; only the winner transports it.
 */
template <int D>
class LockstepCoding {
 public:
  LockstepCoding(StoppingRule<D> tau, StoppingRule<D> sigma, SpaceTimeRandomSource<D> src, int rho,
                 CodingOptions opt = {})
      : tau_(std::move(tau)),
        sigma_(std::move(sigma)),
        src_(std::move(src)),
        aux_(src_.substream(0xB0B)),
        dom_(LatticeDomain<D>::periodic_box(rho)),
        order_(tau_.windows),
        opt_(opt),
        delta_(coding_delta(tau_.windows)) {
    if (!sigma_.simple()) throw DomainError("coding: sigma must be a stopping time of the pile filtration");
    const std::size_t n = dom_.size();
    sims_.resize(n);
    piles_.resize(n);
    sites_.resize(n);
    for (std::size_t x = 0; x < n; ++x) sites_[x] = dom_.site(x);
    active_.resize(n);
    for (std::size_t x = 0; x < n; ++x) active_[x] = static_cast<std::uint32_t>(x);
    // order along e_1 inside each line, lines one after another
    std::sort(active_.begin(), active_.end(), [this](std::uint32_t a, std::uint32_t b) {
      for (int ax = 1; ax < D; ++ax)
        if (sites_[a][ax] != sites_[b][ax]) return sites_[a][ax] < sites_[b][ax];
      return sites_[a][0] < sites_[b][0];
    });
    if (opt_.trace) *opt_.trace << "step,vertex,U,I,W,J,T,case,satisfied\n";
  }

  int steps() const { return n_; }
  int rho() const { return dom_.radius(); }
  int delta() const { return delta_; }
  const LatticeDomain<D>& domain() const { return dom_; }
  std::size_t unsatisfied() const { return active_.size(); }
  const std::vector<Violation>& violations() const { return violations_; }
  std::size_t violation_count() const { return violation_count_; }
  const std::vector<ReadRecord<D>>& ledger() const { return ledger_; }

  SimState state(const Site<D>& v) const { return sims_[dom_.index(v)].s; }
  bool satisfied(const Site<D>& v) const { return sims_[dom_.index(v)].N >= 0; }

  Site<D> source(const Site<D>& v) const { return detail::shift1<D>(v, state(v).k); }
  Cell<D> target(const Site<D>& v) {
    const Cell<D> c = order_.at(state(v).rank);
    return {v + c.u, c.i};
  }

  int pile_height(const Site<D>& u) const { return piles_[dom_.index(u)].L; }
  bool loaded(const Site<D>& u) const { return piles_[dom_.index(u)].unloaded_at < 0; }

  std::optional<Symbol> z(const Site<D>& w, int j) const {
    if (j < 0 || j >= static_cast<int>(z_.size())) return std::nullopt;
    const Symbol s = z_[j][dom_.index(w)];
    if (s == detail::kEmpty) return std::nullopt;
    return s;
  }

  bool certified(const Site<D>& v) const {
    const auto& x = sims_[dom_.index(v)];
    return x.N >= 0 && l1_norm<D>(v) + certify_locality(x.N, delta_) <= dom_.radius();
  }

  VertexOutput<D> output(const Site<D>& v) {
    const auto& x = sims_[dom_.index(v)];
    VertexOutput<D> o;
    o.v = v;
    o.N = x.N;
    o.tau = x.tau;
    if (x.N < 0) return o;
    o.radius = static_cast<int>(certify_locality(x.N, delta_));
    o.certified = certified(v);
    const std::size_t m = tau_.windows.size(x.tau);
    for (std::size_t r = 0; r < m; ++r) {
      const Cell<D> c = order_.at(r);
      o.values.push_back(*z(v + c.u, c.i));
    }
    return o;
  }

  void run(int steps) {
    for (int s = 0; s < steps; ++s) step();
  }

  /// Steps until every listed vertex is satisfied; returns the step count.
  int run_until_satisfied(const std::vector<Site<D>>& watch, int guard) {
    auto done = [&] {
      for (const auto& v : watch)
        if (!satisfied(v)) return false;
      return true;
    };
    while (!done()) {
      if (n_ >= guard) throw GuardExceeded("coding: watched vertices unsatisfied after the guard");
      step();
    }
    return n_;
  }

  void step() {
    const int n = ++n_;
    for (std::uint32_t v : settled_) {
      sims_[v].s.T = false;
      sims_[v].s.step_case = 1;
    }
    settled_.clear();

    struct Move {
      std::uint32_t sim;
      std::uint8_t c;
      bool win;
    };
    std::vector<Move> moves;
    moves.reserve(active_.size());
    std::unordered_map<std::uint64_t, std::size_t> best;
    std::unordered_set<std::uint64_t> here;
    for (std::uint32_t v : active_) {
      const SimState& s = sims_[v].s;
      const std::size_t u = pile_index(v, s.k);
      const Pile& p = piles_[u];
      if (opt_.check_invariants) {
        if (s.I > p.L) fail(n, "source above the pile top", v);
        if (!here.insert(cell_key(u, s.I + 1)).second) fail(n, "two unsatisfied simulators share a source location", v);
      }
      std::uint8_t c;
      if (s.I < p.L) c = 2;
      else if (p.unloaded_at >= 0) c = 3;
      else c = 4;
      moves.push_back({v, c, false});
      if (c != 4) continue;
      const Cell<D> tc = order_.at(s.rank);
      const std::size_t w = dom_.index(sites_[v] + tc.u);
      if (z(w, tc.i)) continue;
      auto [it, fresh] = best.try_emplace(cell_key(w, tc.i), moves.size() - 1);
      if (!fresh) {
        // lexicographically least vertex among equal targets = largest offset
        const Cell<D> other = order_.at(sims_[moves[it->second].sim].s.rank);
        if (other.u < tc.u) it->second = moves.size() - 1;
      }
    }
    for (const auto& kv : best) moves[kv.second].win = true;

    std::vector<std::size_t> touched;
    std::vector<SimState> before;
    if (opt_.check_invariants) {
      before.reserve(moves.size());
      for (const auto& mv : moves) before.push_back(sims_[mv.sim].s);
    }
    for (auto& mv : moves) {
      Sim& x = sims_[mv.sim];
      SimState& s = x.s;
      s.step_case = mv.c;
      s.T = false;
      if (mv.c == 2) {
        ++s.I;
      } else if (mv.c == 3) {
        ++s.k;
        s.I = 0;
        if (opt_.check_invariants && piles_[pile_index(mv.sim, s.k)].L < 0) fail(n, "moved onto an unread pile", mv.sim);
      } else {
        const std::size_t u = pile_index(mv.sim, s.k);
        Pile& p = piles_[u];
        ++s.I;
        if (opt_.check_invariants) {
          if (s.I < static_cast<int>(p.Y.size())) fail(n, "input read twice", mv.sim);
          if (s.I != p.L + 1) fail(n, "read is not directly above the pile top", mv.sim);
        }
        p.L = s.I;
        const Cell<D> tc = order_.at(s.rank);
        const Site<D> wsite = dom_.site(dom_.index(sites_[mv.sim] + tc.u));
        const Site<D> usite = sites_[u];
        Symbol y, zval = 0;
        if (opt_.method == UpdateMethod::A) {
          y = src_.draw(usite, s.I);
          zval = y;
        } else {
          zval = src_.draw(wsite, tc.i);
          y = mv.win ? zval : aux_.draw(usite, s.I);
        }
        p.Y.push_back(y);
        touched.push_back(u);
        if (mv.win) {
          write_z(dom_.index(wsite), tc.i, zval, n, mv.sim);
          s.T = true;
        }
        if (opt_.keep_ledger) ledger_.push_back({sites_[mv.sim], {usite, s.I}, {wsite, tc.i}, n, mv.win});
        ++s.rank;
      }
    }
    for (std::size_t u : touched) {
      Pile& p = piles_[u];
      if (p.unloaded_at >= 0) continue;
      FunctionView<D> view([&p](const Cell<D>& c) {
        if (c.i < 0 || c.i >= static_cast<int>(p.Y.size())) throw DomainError("sigma read an unrevealed input");
        return p.Y[c.i];
      });
      if (sigma_.stops_at(view, p.L)) p.unloaded_at = n;
      else if (sigma_.bound && p.L >= *sigma_.bound) throw DomainError("sigma exceeded its declared bound");
    }

    std::vector<std::uint32_t> still;
    still.reserve(active_.size());
    for (std::size_t a = 0; a < moves.size(); ++a) {
      const auto& mv = moves[a];
      Sim& x = sims_[mv.sim];
      if (mv.c == 4) {
        const int layer = order_.layer_of(x.s.rank);
        if (opt_.check_invariants && layer > x.layer + 1) fail(n, "target skipped a layer", mv.sim);
        if (layer > x.layer) {
          x.layer = layer;
          if (layer > tau_.windows.n_max()) throw DomainError("coding: target left the declared windows");
          try {
            ZView view(*this, sites_[mv.sim]);
            if (tau_.stops_at(view, layer - 1)) {
              x.N = n;
              x.tau = layer - 1;
            } else if (tau_.bound && layer - 1 >= *tau_.bound) {
              throw DomainError("tau exceeded its declared bound");
            }
          } catch (const InvariantViolation& e) {
            fail(n, e.what(), mv.sim);
          }
        }
      }
      if (x.N < 0) still.push_back(mv.sim);
      else settled_.push_back(mv.sim);
    }

    if (opt_.check_invariants) check(n, moves, before);
    if (opt_.trace) trace(n);
    active_.swap(still);
  }

 private:
  struct Sim {
    SimState s;
    int N = -1;
    int tau = -1;
    int layer = 0;
  };
  struct Pile {
    int L = -1;
    int unloaded_at = -1;
    std::vector<Symbol> Y;
  };

  class ZView final : public PrefixView<D> {
   public:
    ZView(const LockstepCoding& e, const Site<D>& v) : e_(e), v_(v) {}
    Symbol at(const Cell<D>& c) const override {
      auto s = e_.z(v_ + c.u, c.i);
      if (!s) throw InvariantViolation("tau read an ungenerated output");
      return *s;
    }

   private:
    const LockstepCoding& e_;
    Site<D> v_;
  };

  std::size_t pile_index(std::uint32_t v, int k) const { return dom_.index(detail::shift1<D>(sites_[v], k)); }
  std::uint64_t cell_key(std::size_t idx, int j) const {
    return static_cast<std::uint64_t>(j) * dom_.size() + static_cast<std::uint64_t>(idx);
  }
  std::optional<Symbol> z(std::size_t w, int j) const {
    if (j < 0 || j >= static_cast<int>(z_.size())) return std::nullopt;
    const Symbol s = z_[j][w];
    if (s == detail::kEmpty) return std::nullopt;
    return s;
  }

  void write_z(std::size_t w, int j, Symbol value, int n, std::uint32_t by) {
    while (static_cast<int>(z_.size()) <= j) z_.emplace_back(dom_.size(), detail::kEmpty);
    if (z_[j][w] != detail::kEmpty) fail(n, "output generated twice", by);
    z_[j][w] = value;
  }

  void fail(int n, const std::string& what, std::uint32_t v) {
    std::ostringstream o;
    const auto& x = sims_[v];
    o << what << " at v=(" << detail::fmt_site<D>(sites_[v]) << ") k=" << x.s.k << " I=" << x.s.I
      << " rank=" << x.s.rank << " case=" << int(x.s.step_case) << " N=" << x.N;
    ++violation_count_;
    if (violations_.size() < opt_.keep) violations_.push_back({n, o.str()});
    if (opt_.throw_on_violation) throw InvariantViolation("step " + std::to_string(n) + ": " + o.str());
  }

  template <class Moves>
  void check(int n, const Moves& moves, const std::vector<SimState>& before) {
    const int side = dom_.side();
    auto pos_less = [](long long a1, int ai, long long b1, int bi) { return a1 < b1 || (a1 == b1 && ai < bi); };
    // moves follow the line order of active_; compare neighbours on each line, seam included
    std::size_t a = 0;
    while (a < moves.size()) {
      std::size_t b = a;
      auto same_line = [&](std::uint32_t p, std::uint32_t q) {
        for (int ax = 1; ax < D; ++ax)
          if (sites_[p][ax] != sites_[q][ax]) return false;
        return true;
      };
      while (b + 1 < moves.size() && same_line(moves[a].sim, moves[b + 1].sim)) ++b;
      for (std::size_t c = a; c <= b; ++c) {
        const std::uint32_t v = moves[c].sim;
        const SimState& s = sims_[v].s;
        const SimState& p = before[c];
        if (!pos_less(p.k, p.I, s.k, s.I)) fail(n, "source location did not advance", v);
        if (c < b || b > a) {
          const std::uint32_t w = moves[c < b ? c + 1 : a].sim;
          const long long wrap = c < b ? 0 : side;
          const SimState& t = sims_[w].s;
          if (!pos_less(sites_[v][0] + s.k, s.I, sites_[w][0] + wrap + t.k, t.I))
            fail(n, "source locations out of order along e1", v);
        }
        for (int k = 0; k < s.k; ++k) {
          const int at = piles_[pile_index(v, k)].unloaded_at;
          if (at < 0 || at > n - 1) fail(n, "simulator passed a loaded pile", v);
        }
        if (s.k > n) fail(n, "source moved faster than one site per step", v);
        const Cell<D> tc = order_.at(s.rank);
        if (l1_norm<D>(tc.u) > static_cast<long long>(tau_.windows.delta()) * n || tc.i > n)
          fail(n, "target outside v + B_n", v);
        if (s.rank > p.rank) {
          const Cell<D> prev = order_.at(p.rank);
          if (!z(dom_.index(sites_[v] + prev.u), prev.i)) fail(n, "advanced past an ungenerated output", v);
        }
        if (s.T && !moves[c].win) fail(n, "transport without winning", v);
      }
      a = b + 1;
    }
    if (!opt_.exhaustive || n % std::max(1, opt_.exhaustive_every) != 0) return;
    for (std::size_t x = 0; x < sims_.size(); ++x) {
      const Sim& m = sims_[x];
      for (std::uint32_t r = 0; r < m.s.rank; ++r) {
        const Cell<D> c = order_.at(r);
        if (!z(dom_.index(sites_[x] + c.u), c.i)) fail(n, "earlier target ungenerated", static_cast<std::uint32_t>(x));
      }
      const Pile& p = piles_[x];
      if (static_cast<int>(p.Y.size()) != p.L + 1) fail(n, "revealed inputs differ from the pile height", static_cast<std::uint32_t>(x));
      if (m.N >= 0 && m.N < n) {
        ZView view(*this, sites_[x]);
        auto t = evaluate(tau_, view, m.tau);
        if (!t || *t != m.tau) fail(n, "satisfied vertex lost its stop value", static_cast<std::uint32_t>(x));
      }
    }
  }

  void trace(int n) {
    for (std::size_t x = 0; x < sims_.size(); ++x) {
      if (l1_norm<D>(sites_[x]) > opt_.trace_radius) continue;
      const Sim& m = sims_[x];
      const Cell<D> c = order_.at(m.s.rank);
      *opt_.trace << n << ',' << detail::fmt_site<D>(sites_[x]) << ','
                  << detail::fmt_site<D>(detail::shift1<D>(sites_[x], m.s.k)) << ',' << m.s.I << ','
                  << detail::fmt_site<D>(sites_[x] + c.u) << ',' << c.i << ',' << int(m.s.T) << ','
                  << int(m.s.step_case) << ',' << int(m.N >= 0) << '\n';
    }
  }

  StoppingRule<D> tau_, sigma_;
  SpaceTimeRandomSource<D> src_, aux_;
  LatticeDomain<D> dom_;
  OrderedPrefix<D> order_;
  CodingOptions opt_;
  int delta_;
  int n_ = 0;
  std::vector<Sim> sims_;
  std::vector<Pile> piles_;
  std::vector<Site<D>> sites_;
  std::vector<std::uint32_t> active_;
  std::vector<std::uint32_t> settled_;  // satisfied during the last step
  std::vector<std::vector<Symbol>> z_;
  std::vector<Violation> violations_;
  std::size_t violation_count_ = 0;
  std::vector<ReadRecord<D>> ledger_;
};

/// Lockstep runs on boxes sized for N_cap = 8, 16, ... until the origin is certified.
template <int D>
struct AdaptiveResult {
  VertexOutput<D> origin;
  std::vector<int> caps;
  bool consistent = true;  // certified outputs agreed across every growth
  std::size_t violations = 0;
};

template <int D>
AdaptiveResult<D> adaptive_coding(const StoppingRule<D>& tau, const StoppingRule<D>& sigma,
                                  const SpaceTimeRandomSource<D>& src, CodingOptions opt, int guard,
                                  int first_cap = 8) {
  AdaptiveResult<D> res;
  const int delta = coding_delta(tau.windows);
  std::vector<VertexOutput<D>> prev;
  for (int cap = first_cap;; cap *= 2) {
    res.caps.push_back(cap);
    const long long rho = certify_locality(cap, delta);
    if (rho > (1 << 22)) throw GuardExceeded("adaptive coding: box too large");
    LockstepCoding<D> eng(tau, sigma, src, static_cast<int>(rho), opt);
    bool ok = true;
    try {
      eng.run_until_satisfied({Site<D>{}}, std::min(cap, guard));
    } catch (const GuardExceeded&) {
      ok = false;
    }
    res.violations += eng.violation_count();
    for (const auto& o : prev) {
      auto now = eng.output(o.v);
      if (now.N != o.N || now.tau != o.tau || now.values != o.values) res.consistent = false;
    }
    if (ok && eng.certified(Site<D>{})) {
      res.origin = eng.output(Site<D>{});
      return res;
    }
    prev.clear();
    if (D == 1) {
      for (int x = -eng.rho(); x <= eng.rho(); ++x) {
        Site<D> v{};
        v[0] = x;
        if (eng.certified(v)) prev.push_back(eng.output(v));
      }
    } else {
      for (const auto& v : l1_ball<D>(std::min(eng.rho(), 8)))
        if (eng.certified(v)) prev.push_back(eng.output(v));
    }
    if (cap >= guard) throw GuardExceeded("adaptive coding: origin not certified within the guard");
  }
}

/**
 * The algorithm on the infinite lattice, evaluated on demand.
 *
 * Each query computes only the simulators, piles and outputs it depends on, memoised. Every
 * read of X passes through one place, so the radius of the input actually used by a vertex is
 * measured rather than bounded.
 */
template <int D>
class LazyCoding {
 public:
  LazyCoding(StoppingRule<D> tau, StoppingRule<D> sigma, SpaceTimeRandomSource<D> src,
             UpdateMethod method = UpdateMethod::A)
      : tau_(std::move(tau)),
        sigma_(std::move(sigma)),
        src_(std::move(src)),
        aux_(src_.substream(0xB0B)),
        order_(tau_.windows),
        method_(method),
        delta_(coding_delta(tau_.windows)) {
    if (!sigma_.simple()) throw DomainError("coding: sigma must be a stopping time of the pile filtration");
  }

  int delta() const { return delta_; }
  std::size_t simulators() const { return hist_.size(); }
  std::size_t piles() const { return piles_.size(); }

  /// Farthest X cell (l1) read from `center` since the last call to track.
  void track(const Site<D>& center) {
    center_ = center;
    footprint_ = -1;
  }
  int footprint() const { return static_cast<int>(footprint_); }

  /// Wall-clock limit; queries past it throw GuardExceeded.
  void set_deadline(std::chrono::steady_clock::time_point t) { deadline_ = t; }
  std::size_t work() const { return work_; }

  SimState state(const Site<D>& v, int t) { return core(v, t); }
  bool satisfied(const Site<D>& v, int t) { return sat(v, t); }
  int pile_height(const Site<D>& u, int t) { return pile(u, t).L_at[t]; }
  bool loaded(const Site<D>& u, int t) { return pile(u, t).unloaded_from > t; }

  std::optional<Symbol> z(const Site<D>& w, int j, int t) {
    ZMemo& m = zmemo(w, j, t);
    if (m.step >= 0 && m.step <= t) return m.value;
    return std::nullopt;
  }

  /// Runs v until satisfied; the output is the generated Z over v + B_tau.
  VertexOutput<D> solve(const Site<D>& v, int guard) {
    int t = 0;
    while (!sat(v, t)) {
      if (++t > guard) throw GuardExceeded("lazy coding: vertex unsatisfied after the guard");
    }
    const Hist& h = hist_.at(v);
    VertexOutput<D> o;
    o.v = v;
    o.N = h.N;
    o.tau = h.tau;
    o.radius = static_cast<int>(certify_locality(h.N, delta_));
    o.certified = true;
    const std::size_t m = tau_.windows.size(h.tau);
    for (std::size_t r = 0; r < m; ++r) {
      const Cell<D> c = order_.at(r);
      auto s = z(v + c.u, c.i, h.N);
      if (!s) throw InvariantViolation("lazy coding: satisfied vertex misses an output");
      o.values.push_back(*s);
    }
    o.footprint = static_cast<int>(footprint_);
    return o;
  }

 private:
  struct Hist {
    std::vector<SimState> core{SimState{}};
    std::vector<char> sat;
    int N = -1;
    int tau = -1;
    int layer = 0;
    bool busy = false;
  };
  struct Pile {
    std::vector<int> L_at{-1};
    std::vector<Symbol> Y;
    int unloaded_from = INT_MAX;
  };
  struct ZMemo {
    int step = -1;
    Symbol value = 0;
    int checked = 0;  // no write at steps <= checked
  };

  Symbol read_x(const SpaceTimeRandomSource<D>& s, const Site<D>& u, int i) {
    footprint_ = std::max<long long>(footprint_, l1_norm<D>(u - center_));
    return s.draw(u, i);
  }

  SimState core(const Site<D>& v, int t) {
    Hist& h = hist_[v];
    while (true) {
      if (h.N >= 0 && t >= h.N) {
        SimState s = h.core[h.N];
        if (t > h.N) {
          s.T = false;
          s.step_case = 1;
        }
        return s;
      }
      const int m = static_cast<int>(h.core.size()) - 1;
      if (t <= m) return h.core[t];
      if (sat(v, m)) continue;
      if (h.busy) throw InvariantViolation("lazy coding: dependency cycle");
      h.busy = true;
      const SimState next = advance(v, h.core[m], m + 1);
      h.busy = false;
      h.core.push_back(next);
    }
  }

  SimState advance(const Site<D>& v, SimState s, int n) {
    if ((++work_ & 0xfff) == 0 && deadline_ && std::chrono::steady_clock::now() > *deadline_)
      throw GuardExceeded("lazy coding: time budget exhausted");
    const Site<D> U = detail::shift1<D>(v, s.k);
    Pile& p = pile(U, n - 1);
    const int L = p.L_at[n - 1];
    s.T = false;
    if (s.I > L) throw InvariantViolation("lazy coding: source above the pile top");
    if (s.I < L) {
      s.step_case = 2;
      ++s.I;
      return s;
    }
    if (p.unloaded_from <= n - 1) {
      s.step_case = 3;
      ++s.k;
      s.I = 0;
      return s;
    }
    s.step_case = 4;
    const Cell<D> tc = order_.at(s.rank);
    const Site<D> W = v + tc.u;
    bool win = !z(W, tc.i, n - 1);
    for (std::uint32_t r = 0; win && r <= static_cast<std::uint32_t>(n - 1); ++r) {
      const Cell<D> oc = order_.at(r);
      if (oc.i != tc.i || !(tc.u < oc.u)) continue;
      const Site<D> w = W - oc.u;
      const SimState o = core(w, n - 1);
      if (o.rank != r || sat(w, n - 1)) continue;
      const Site<D> OU = detail::shift1<D>(w, o.k);
      Pile& q = pile(OU, n - 1);
      if (o.I == q.L_at[n - 1] && q.unloaded_from > n - 1) win = false;
    }
    s.T = win;
    ++s.I;
    ++s.rank;
    return s;
  }

  bool sat(const Site<D>& v, int t) {
    Hist& h = hist_[v];
    if (h.N >= 0) return t >= h.N;
    while (static_cast<int>(h.sat.size()) <= t) {
      const int m = static_cast<int>(h.sat.size());
      const SimState s = core(v, m);
      if (h.N >= 0) return t >= h.N;
      bool ok = false;
      if (s.step_case == 4) {
        const int layer = order_.layer_of(s.rank);
        if (layer > h.layer) {
          h.layer = layer;
          if (layer > tau_.windows.n_max()) throw DomainError("coding: target left the declared windows");
          ZView view(*this, v, m);
          if (tau_.stops_at(view, layer - 1)) {
            ok = true;
            h.tau = layer - 1;
          } else if (tau_.bound && layer - 1 >= *tau_.bound) {
            throw DomainError("tau exceeded its declared bound");
          }
        }
      }
      if (static_cast<int>(h.sat.size()) != m) throw InvariantViolation("lazy coding: dependency cycle");
      h.sat.push_back(ok);
      if (ok) {
        h.N = m;
        return t >= m;
      }
    }
    return h.sat[t];
  }

  Pile& pile(const Site<D>& U, int t) {
    Pile& p = piles_[U];
    while (static_cast<int>(p.L_at.size()) <= t) {
      const int s = static_cast<int>(p.L_at.size());
      int L = p.L_at[s - 1];
      int readers = 0;
      for (int k = 0; k <= s; ++k) {
        const Site<D> v = detail::shift1<D>(U, -k);
        const SimState c = core(v, s);
        if (c.step_case != 4 || c.k != k) continue;
        if (++readers > 1) throw InvariantViolation("lazy coding: two reads at one pile in one step");
        if (c.I != L + 1) throw InvariantViolation("lazy coding: read is not directly above the pile top");
        L = c.I;
        Symbol y;
        if (method_ == UpdateMethod::A) {
          y = read_x(src_, U, c.I);
        } else if (c.T) {
          const Cell<D> tc = order_.at(c.rank - 1);
          y = read_x(src_, v + tc.u, tc.i);
        } else {
          y = read_x(aux_, U, c.I);
        }
        p.Y.push_back(y);
      }
      if (static_cast<int>(p.L_at.size()) != s) throw InvariantViolation("lazy coding: dependency cycle");
      p.L_at.push_back(L);
      if (L > p.L_at[s - 1] && p.unloaded_from == INT_MAX) {
        FunctionView<D> view([&p](const Cell<D>& c) {
          if (c.i < 0 || c.i >= static_cast<int>(p.Y.size())) throw DomainError("sigma read an unrevealed input");
          return p.Y[c.i];
        });
        if (sigma_.stops_at(view, L)) p.unloaded_from = s;
        else if (sigma_.bound && L >= *sigma_.bound) throw DomainError("sigma exceeded its declared bound");
      }
    }
    return p;
  }

  ZMemo& zmemo(const Site<D>& w, int j, int t) {
    ZMemo& m = zs_[Cell<D>{w, j}];
    while (m.step < 0 && m.checked < t) {
      const int s = m.checked + 1;
      for (std::uint32_t r = 0; r + 1 <= static_cast<std::uint32_t>(s); ++r) {
        const Cell<D> c = order_.at(r);
        if (c.i != j) continue;
        const Site<D> v = w - c.u;
        const SimState now = core(v, s);
        if (now.step_case != 4 || !now.T || now.rank != r + 1) continue;
        if (m.step >= 0) throw InvariantViolation("lazy coding: output generated twice");
        m.step = s;
        m.value = method_ == UpdateMethod::A ? read_x(src_, detail::shift1<D>(v, now.k), now.I) : read_x(src_, w, j);
      }
      m.checked = s;
    }
    return m;
  }

  class ZView final : public PrefixView<D> {
   public:
    ZView(LazyCoding& e, const Site<D>& v, int t) : e_(e), v_(v), t_(t) {}
    Symbol at(const Cell<D>& c) const override {
      auto s = e_.z(v_ + c.u, c.i, t_);
      if (!s) throw InvariantViolation("tau read an ungenerated output");
      return *s;
    }

   private:
    LazyCoding& e_;
    Site<D> v_;
    int t_;
  };

  StoppingRule<D> tau_, sigma_;
  SpaceTimeRandomSource<D> src_, aux_;
  OrderedPrefix<D> order_;
  UpdateMethod method_;
  int delta_;
  Site<D> center_{};
  long long footprint_ = -1;
  std::optional<std::chrono::steady_clock::time_point> deadline_;
  std::size_t work_ = 0;
  std::unordered_map<Site<D>, Hist, SiteHash<D>> hist_;
  std::unordered_map<Site<D>, Pile, SiteHash<D>> piles_;
  std::unordered_map<Cell<D>, ZMemo, CellHash<D>> zs_;
};

}  // namespace finicode
