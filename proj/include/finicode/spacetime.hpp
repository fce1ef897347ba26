#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace finicode {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DomainError : Error {
  using Error::Error;
};

template <int D>
using Site = std::array<int, D>;

template <int D>
int l1_norm(const Site<D>& v) {
  int s = 0;
  for (int k = 0; k < D; ++k) s += std::abs(v[k]);
  return s;
}

template <std::size_t N>
std::array<int, N> operator+(const std::array<int, N>& a, const std::array<int, N>& b) {
  std::array<int, N> r;
  for (std::size_t k = 0; k < N; ++k) r[k] = a[k] + b[k];
  return r;
}

template <std::size_t N>
std::array<int, N> operator-(const std::array<int, N>& a, const std::array<int, N>& b) {
  std::array<int, N> r;
  for (std::size_t k = 0; k < N; ++k) r[k] = a[k] - b[k];
  return r;
}

template <int D>
Site<D> unit(int axis, int sign = 1) {
  Site<D> r{};
  r[axis] = sign;
  return r;
}

/// A space-time point (u, i); used both for absolute points and for offsets in a window.
template <int D>
struct Cell {
  Site<D> u{};
  int i = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

/// Ordering inside one layer: by time index, then lexicographically on coordinates.
template <int D>
bool layer_less(const Cell<D>& a, const Cell<D>& b) {
  if (a.i != b.i) return a.i < b.i;
  return a.u < b.u;
}

template <int D>
struct SiteHash {
  std::size_t operator()(const Site<D>& v) const noexcept {
    std::uint64_t h = 0x9e3779b97f4a7c15ULL;
    for (int k = 0; k < D; ++k) {
      h ^= static_cast<std::uint64_t>(static_cast<std::uint32_t>(v[k])) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    }
    return static_cast<std::size_t>(h);
  }
};

template <int D>
struct CellHash {
  std::size_t operator()(const Cell<D>& c) const noexcept {
    std::size_t h = SiteHash<D>{}(c.u);
    return h ^ (static_cast<std::size_t>(static_cast<std::uint32_t>(c.i)) * 0x100000001b3ULL + (h << 7));
  }
};

/// All sites with |u|_1 <= r, in lexicographic order.
template <int D>
std::vector<Site<D>> l1_ball(int r) {
  std::vector<Site<D>> out;
  if (r < 0) return out;
  Site<D> cur{};
  std::function<void(int, int)> rec = [&](int axis, int budget) {
    if (axis == D) {
      out.push_back(cur);
      return;
    }
    for (int x = -budget; x <= budget; ++x) {
      cur[axis] = x;
      rec(axis + 1, budget - std::abs(x));
    }
  };
  rec(0, r);
  return out;
}

/// All sites with r_in < |u|_1 <= r_out, in lexicographic order.
template <int D>
std::vector<Site<D>> l1_shell(int r_in, int r_out) {
  std::vector<Site<D>> out;
  for (const auto& s : l1_ball<D>(r_out))
    if (l1_norm<D>(s) > r_in) out.push_back(s);
  return out;
}

enum class WindowKind { cone, cube, simple, custom };

inline std::string to_string(WindowKind k) {
  switch (k) {
    case WindowKind::cone: return "cone";
    case WindowKind::cube: return "cube";
    case WindowKind::simple: return "simple";
    case WindowKind::custom: return "custom";
  }
  return "?";
}

/**
 * Increasing sequence of finite windows B_0 = {(0,0)} ⊂ B_1 ⊂ ... in Z^D x Z_{>=0}.
 *
 * Layer n is B_n minus B_{n-1}. Elements of B_inf are ordered first by the layer that
 * contains them, then by time index, then lexicographically on coordinates.
 */
template <int D>
class WindowSequence {
 public:
  static WindowSequence cone(int delta) {
    if (delta < 0) throw DomainError("cone: negative reach");
    return WindowSequence(WindowKind::cone, delta, {});
  }
  static WindowSequence cube(int delta) {
    if (delta < 0) throw DomainError("cube: negative reach");
    return WindowSequence(WindowKind::cube, delta, {});
  }
  static WindowSequence simple() { return WindowSequence(WindowKind::simple, 0, {}); }

  /// Explicit layers L_0, ..., L_{n_max}; B_n is the union of the first n+1 layers.
  static WindowSequence custom(std::vector<std::vector<Cell<D>>> layers, int delta) {
    if (layers.empty() || layers[0].size() != 1 || !(layers[0][0] == Cell<D>{}))
      throw DomainError("custom windows: B_0 must be {(0,0)}");
    std::unordered_map<Cell<D>, int, CellHash<D>> where;
    for (std::size_t n = 0; n < layers.size(); ++n) {
      if (layers[n].empty()) throw DomainError("custom windows: empty layer (sequence must increase)");
      for (const auto& c : layers[n]) {
        if (c.i < 0) throw DomainError("custom windows: negative time index");
        if (!where.emplace(c, static_cast<int>(n)).second) throw DomainError("custom windows: repeated element");
      }
      std::sort(layers[n].begin(), layers[n].end(), layer_less<D>);
    }
    WindowSequence w(WindowKind::custom, delta, std::move(layers));
    w.custom_index_ = std::move(where);
    return w;
  }

  WindowKind kind() const { return kind_; }
  int delta() const { return delta_; }
  /// Largest n for which B_n is defined (unbounded kinds report INT_MAX).
  int n_max() const { return kind_ == WindowKind::custom ? static_cast<int>(custom_.size()) - 1 : 0x7fffffff; }

  /// Least n with c in B_n, or nullopt when c is not in B_inf.
  std::optional<int> first_layer(const Cell<D>& c) const {
    if (c.i < 0) return std::nullopt;
    const int r = l1_norm<D>(c.u);
    switch (kind_) {
      case WindowKind::cone:
        if (r > delta_ * c.i) return std::nullopt;
        return c.i;
      case WindowKind::cube: {
        if (delta_ == 0) return r == 0 ? std::optional<int>(c.i) : std::nullopt;
        const int need = (r + delta_ - 1) / delta_;
        return std::max(c.i, need);
      }
      case WindowKind::simple:
        if (r != 0) return std::nullopt;
        return c.i;
      case WindowKind::custom: {
        auto it = custom_index_.find(c);
        if (it == custom_index_.end()) return std::nullopt;
        return it->second;
      }
    }
    return std::nullopt;
  }

  bool contains(int n, const Cell<D>& c) const {
    auto m = first_layer(c);
    return m && *m <= n;
  }

  /// B_n minus B_{n-1}, sorted.
  std::vector<Cell<D>> layer(int n) const {
    check_n(n);
    std::vector<Cell<D>> out;
    switch (kind_) {
      case WindowKind::cone:
        for (const auto& s : l1_ball<D>(delta_ * n)) out.push_back({s, n});
        break;
      case WindowKind::cube:
        for (int i = 0; i < n; ++i)
          for (const auto& s : l1_shell<D>(delta_ * (n - 1), delta_ * n)) out.push_back({s, i});
        for (const auto& s : l1_ball<D>(delta_ * n)) out.push_back({s, n});
        break;
      case WindowKind::simple:
        out.push_back({Site<D>{}, n});
        break;
      case WindowKind::custom:
        out = custom_[n];
        break;
    }
    return out;
  }

  /// B_n, sorted in the global order.
  std::vector<Cell<D>> window(int n) const {
    std::vector<Cell<D>> out;
    for (int m = 0; m <= n; ++m) {
      auto l = layer(m);
      out.insert(out.end(), l.begin(), l.end());
    }
    return out;
  }

  std::size_t size(int n) const {
    std::size_t s = 0;
    for (int m = 0; m <= n; ++m) s += layer_size(m);
    return s;
  }

  std::size_t layer_size(int n) const {
    check_n(n);
    if (kind_ == WindowKind::simple) return 1;
    if (kind_ == WindowKind::custom) return custom_[n].size();
    const std::size_t ball = l1_ball<D>(delta_ * n).size();
    if (kind_ == WindowKind::cone) return ball;
    const std::size_t inner = n == 0 ? 0 : l1_ball<D>(delta_ * (n - 1)).size();
    return ball + static_cast<std::size_t>(n) * (ball - inner);
  }

  /// The element following c in B_inf.
  Cell<D> successor(const Cell<D>& c) const {
    auto m = first_layer(c);
    if (!m) throw DomainError("successor: element not in B_inf");
    auto l = layer(*m);
    auto it = std::find(l.begin(), l.end(), c);
    ++it;
    if (it != l.end()) return *it;
    check_n(*m + 1);
    return layer(*m + 1).front();
  }

 private:
  WindowSequence(WindowKind k, int delta, std::vector<std::vector<Cell<D>>> layers)
      : kind_(k), delta_(delta), custom_(std::move(layers)) {}

  void check_n(int n) const {
    if (n < 0) throw DomainError("window index must be non-negative");
    if (kind_ == WindowKind::custom && n >= static_cast<int>(custom_.size()))
      throw DomainError("custom windows are not declared beyond n_max=" + std::to_string(n_max()));
  }

  WindowKind kind_;
  int delta_;
  std::vector<std::vector<Cell<D>>> custom_;
  std::unordered_map<Cell<D>, int, CellHash<D>> custom_index_;
};

/// Checks Delta_n <= delta * n for n = 0..n_max, where Delta_n is the spatial radius of B_n.
template <int D>
bool linearity_check(const WindowSequence<D>& seq, int delta, int n_max) {
  int radius = 0;
  for (int n = 0; n <= std::min(n_max, seq.n_max()); ++n) {
    for (const auto& c : seq.layer(n)) radius = std::max(radius, l1_norm<D>(c.u));
    if (radius > delta * n) return false;
  }
  return true;
}

/**
 * Cached prefix of the ordered B_inf: element at each rank together with its layer.
 * A simulator's target after t steps has rank at most t, so only a prefix is ever needed.
 */
template <int D>
class OrderedPrefix {
 public:
  explicit OrderedPrefix(WindowSequence<D> seq) : seq_(std::move(seq)) {}

  const WindowSequence<D>& windows() const { return seq_; }

  const Cell<D>& at(std::size_t rank) { return (ensure(rank), cells_[rank]); }
  int layer_of(std::size_t rank) { return (ensure(rank), layers_[rank]); }
  /// Rank of the first element of layer m.
  std::size_t layer_start(int m) {
    while (static_cast<int>(starts_.size()) <= m) grow();
    return starts_[m];
  }
  std::optional<std::size_t> rank_of(const Cell<D>& c) {
    auto m = seq_.first_layer(c);
    if (!m) return std::nullopt;
    layer_start(*m);
    auto it = index_.find(c);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t cached() const { return cells_.size(); }

 private:
  void ensure(std::size_t rank) {
    while (cells_.size() <= rank) grow();
  }
  void grow() {
    const int m = static_cast<int>(starts_.size());
    starts_.push_back(cells_.size());
    for (const auto& c : seq_.layer(m)) {
      index_.emplace(c, cells_.size());
      cells_.push_back(c);
      layers_.push_back(m);
    }
  }

  WindowSequence<D> seq_;
  std::vector<Cell<D>> cells_;
  std::vector<int> layers_;
  std::vector<std::size_t> starts_;
  std::unordered_map<Cell<D>, std::size_t, CellHash<D>> index_;
};

/// Finite carrier for configurations: a periodic torus of side L, or a box window of radius rho.
template <int D>
class LatticeDomain {
 public:
  enum class Mode { torus, window };

  static LatticeDomain torus(int side) {
    if (side < 1) throw DomainError("torus side must be positive");
    return LatticeDomain(Mode::torus, side, 0);
  }
  /// Box [-rho, rho]^D with periodic identification of opposite faces.
  static LatticeDomain periodic_box(int rho) {
    if (rho < 0) throw DomainError("box radius must be non-negative");
    return LatticeDomain(Mode::torus, 2 * rho + 1, rho);
  }
  /// Box [-rho, rho]^D with its boundary semantics handled by the caller.
  static LatticeDomain window(int rho) {
    if (rho < 0) throw DomainError("window radius must be non-negative");
    return LatticeDomain(Mode::window, 2 * rho + 1, rho);
  }

  Mode mode() const { return mode_; }
  int side() const { return side_; }
  int radius() const { return rho_; }
  std::size_t size() const {
    std::size_t n = 1;
    for (int k = 0; k < D; ++k) n *= static_cast<std::size_t>(side_);
    return n;
  }

  /// Coordinates run over -rho..rho per axis (0..L-1 for a plain torus).
  Site<D> site(std::size_t idx) const {
    Site<D> s;
    for (int k = D - 1; k >= 0; --k) {
      s[k] = static_cast<int>(idx % side_) - rho_;
      idx /= side_;
    }
    return s;
  }

  bool inside(const Site<D>& s) const {
    if (mode_ == Mode::torus) return true;
    for (int k = 0; k < D; ++k)
      if (s[k] < -rho_ || s[k] > rho_) return false;
    return true;
  }

  /// Index of s; torus coordinates are reduced mod L, window coordinates must be inside.
  std::size_t index(const Site<D>& s) const {
    std::size_t idx = 0;
    for (int k = 0; k < D; ++k) {
      int x = s[k] + rho_;
      if (mode_ == Mode::torus) {
        x %= side_;
        if (x < 0) x += side_;
      } else if (x < 0 || x >= side_) {
        throw DomainError("site outside window");
      }
      idx = idx * side_ + static_cast<std::size_t>(x);
    }
    return idx;
  }

 private:
  LatticeDomain(Mode m, int side, int rho) : mode_(m), side_(side), rho_(rho) {}
  Mode mode_;
  int side_;
  int rho_;
};

}  // namespace finicode
