#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pca.hpp"

namespace finicode {

/// Finite graph used as the carrier of an exactly enumerated measure.
struct Carrier {
  int n = 0;
  std::vector<std::pair<int, int>> edges;

  static Carrier cycle(int n) {
    Carrier c{n, {}};
    for (int x = 0; x < n; ++x) c.edges.push_back({x, (x + 1) % n});
    return c;
  }
  static Carrier path(int n) {
    Carrier c{n, {}};
    for (int x = 0; x + 1 < n; ++x) c.edges.push_back({x, x + 1});
    return c;
  }
  /// Torus of side L >= 3 with sites indexed as in LatticeDomain::torus.
  template <int D>
  static Carrier torus(int side) {
    if (side < 3) throw DomainError("torus carrier needs side >= 3");
    auto dom = LatticeDomain<D>::torus(side);
    Carrier c{static_cast<int>(dom.size()), {}};
    for (std::size_t x = 0; x < dom.size(); ++x)
      for (int k = 0; k < D; ++k)
        c.edges.push_back({static_cast<int>(x), static_cast<int>(dom.index(dom.site(x) + unit<D>(k)))});
    return c;
  }
};

/// Probabilities over configurations coded base `q` with site 0 as the least significant digit.
struct ExactDistribution {
  int q = 2;
  int n = 0;
  std::vector<double> p;

  std::vector<int> decode(std::size_t code) const {
    std::vector<int> x(n);
    for (int k = 0; k < n; ++k) {
      x[k] = static_cast<int>(code % q);
      code /= q;
    }
    return x;
  }
  static std::size_t encode(const std::vector<int>& x, int q) {
    std::size_t code = 0;
    for (int k = static_cast<int>(x.size()) - 1; k >= 0; --k) code = code * q + x[k];
    return code;
  }
  /// Marginal on the listed sites, coded in the listed order.
  ExactDistribution marginal(const std::vector<int>& sites) const {
    ExactDistribution m{q, static_cast<int>(sites.size()), {}};
    std::size_t states = 1;
    for (std::size_t k = 0; k < sites.size(); ++k) states *= q;
    m.p.assign(states, 0.0);
    for (std::size_t c = 0; c < p.size(); ++c) {
      if (p[c] == 0) continue;
      auto x = decode(c);
      std::vector<int> y;
      for (int s : sites) y.push_back(x[s]);
      m.p[encode(y, q)] += p[c];
    }
    return m;
  }
};

inline std::size_t ipow(std::size_t b, int e) {
  std::size_t r = 1;
  while (e-- > 0) r *= b;
  return r;
}

/// Ising Gibbs measure exp(beta * sum over edges of x_u x_v) / Z, states 0/1 meaning -1/+1.
inline ExactDistribution gibbs_ising(const Carrier& c, double beta, std::size_t cap = std::size_t{1} << 22) {
  const std::size_t states = ipow(2, c.n);
  if (c.n > 40 || states > cap) throw DomainError("enumeration exceeds cap");
  ExactDistribution d{2, c.n, std::vector<double>(states)};
  long double z = 0;
  std::vector<long double> w(states);
  for (std::size_t code = 0; code < states; ++code) {
    int e = 0;
    for (auto [a, b] : c.edges) e += (((code >> a) & 1) == ((code >> b) & 1)) ? 1 : -1;
    w[code] = std::exp(static_cast<long double>(beta) * e);
    z += w[code];
  }
  for (std::size_t code = 0; code < states; ++code) d.p[code] = static_cast<double>(w[code] / z);
  return d;
}

/// Uniform measure on proper q-colorings.
inline ExactDistribution gibbs_colorings(const Carrier& c, int q, std::size_t cap = std::size_t{1} << 24) {
  const std::size_t states = ipow(q, c.n);
  if (states > cap) throw DomainError("enumeration exceeds cap");
  ExactDistribution d{q, c.n, std::vector<double>(states, 0.0)};
  std::size_t proper = 0;
  for (std::size_t code = 0; code < states; ++code) {
    auto x = d.decode(code);
    bool ok = true;
    for (auto [a, b] : c.edges) ok = ok && x[a] != x[b];
    if (ok) {
      d.p[code] = 1.0;
      ++proper;
    }
  }
  if (proper == 0) throw DomainError("no proper coloring");
  for (auto& x : d.p) x /= static_cast<double>(proper);
  return d;
}

/// Models whose noise splits into an activation coin and a private part read only at the center.
template <class M>
concept SplitNoiseModel = PcaModel<M> && requires(const M& m, typename M::Noise a) {
  { m.private_alphabet() } -> std::convertible_to<std::vector<std::pair<typename M::Noise, double>>>;
  { m.activation() } -> std::convertible_to<double>;
  a.coin;
};

namespace detail {

template <PcaModel M>
struct TorusLocal {
  DomainTables<M::dim> tab;
  int n;
  int q;
  explicit TorusLocal(const M& m, int side)
      : tab(LatticeDomain<M::dim>::torus(side), m.state_offsets(), m.noise_offsets()),
        n(static_cast<int>(tab.domain.size())), q(m.num_states()) {}
};

}  // namespace detail

/**
 * One step of the torus chain applied to a distribution, summing over activation patterns and,
 * at every site, over the private noise of that site.
 */
template <SplitNoiseModel M>
std::vector<double> apply_kernel(const M& m, int side, const std::vector<double>& mu) {
  detail::TorusLocal<M> L(m, side);
  const int n = L.n, q = L.q;
  const std::size_t states = ipow(q, n);
  if (mu.size() != states) throw DomainError("distribution size does not match torus");
  if (n > 24) throw DomainError("torus too large for exact kernel");
  const auto priv = m.private_alphabet();
  const double act = m.activation();
  std::vector<double> out(states, 0.0);
  std::vector<std::vector<double>> marg(n, std::vector<double>(q));
  std::vector<State> s(L.tab.fs);
  std::vector<typename M::Noise> a(L.tab.fn);
  for (std::size_t code = 0; code < states; ++code) {
    if (mu[code] == 0) continue;
    std::vector<int> x(n);
    std::size_t c = code;
    for (int k = 0; k < n; ++k) {
      x[k] = static_cast<int>(c % q);
      c /= q;
    }
    for (std::uint64_t pat = 0; pat < (std::uint64_t{1} << n); ++pat) {
      const int ones = std::popcount(pat);
      const double pc = std::pow(act, ones) * std::pow(1 - act, n - ones);
      for (int v = 0; v < n; ++v) {
        std::fill(marg[v].begin(), marg[v].end(), 0.0);
        for (std::size_t k = 0; k < L.tab.fs; ++k) s[k] = static_cast<State>(x[L.tab.state_nbr[v * L.tab.fs + k]]);
        for (std::size_t k = 0; k < L.tab.fn; ++k) {
          const int y = L.tab.noise_nbr[v * L.tab.fn + k];
          a[k] = priv.front().first;
          a[k].coin = static_cast<std::uint8_t>((pat >> y) & 1);
        }
        for (const auto& [pn, pp] : priv) {
          auto center = pn;
          center.coin = a[0].coin;
          a[0] = center;
          marg[v][m.update(s.data(), a.data())] += pp;
        }
      }
      // spread the product of site marginals over next configurations
      struct Rec {
        static void go(int v, std::size_t acc, double w, int n, int q, const std::vector<std::vector<double>>& mg,
                       std::vector<double>& o) {
          if (w == 0) return;
          if (v < 0) {
            o[acc] += w;
            return;
          }
          for (int y = 0; y < q; ++y)
            if (mg[v][y] != 0) go(v - 1, acc * q + y, w * mg[v][y], n, q, mg, o);
        }
      };
      Rec::go(n - 1, 0, mu[code] * pc, n, q, marg, out);
    }
  }
  return out;
}

/// Dense transition matrix by the same factorisation; row = current configuration.
template <SplitNoiseModel M>
std::vector<std::vector<double>> pca_kernel(const M& m, int side, std::size_t cap = 1 << 12) {
  const std::size_t states = ipow(m.num_states(), static_cast<int>(LatticeDomain<M::dim>::torus(side).size()));
  if (states > cap) throw DomainError("kernel exceeds cap");
  std::vector<std::vector<double>> k(states);
  for (std::size_t c = 0; c < states; ++c) {
    std::vector<double> e(states, 0.0);
    e[c] = 1.0;
    k[c] = apply_kernel(m, side, e);
  }
  return k;
}

/// Transition matrix by enumerating every joint noise assignment of a finite-noise model.
template <FiniteNoiseModel M>
std::vector<std::vector<double>> pca_kernel_exhaustive(const M& m, int side, std::size_t cap = 1 << 26) {
  detail::TorusLocal<M> L(m, side);
  const int n = L.n, q = L.q;
  const auto alpha = m.noise_alphabet();
  const std::size_t states = ipow(q, n);
  const std::size_t assignments = ipow(alpha.size(), n);
  if (states * assignments > cap) throw DomainError("exhaustive kernel exceeds cap");
  std::vector<std::vector<double>> k(states, std::vector<double>(states, 0.0));
  std::vector<State> s(L.tab.fs);
  std::vector<typename M::Noise> a(L.tab.fn);
  std::vector<typename M::Noise> w(n);
  for (std::size_t asg = 0; asg < assignments; ++asg) {
    double pw = 1;
    std::size_t r = asg;
    for (int v = 0; v < n; ++v) {
      const auto sym = static_cast<std::uint32_t>(r % alpha.size());
      r /= alpha.size();
      pw *= alpha.prob(sym);
      w[v] = m.decode_noise(sym);
    }
    if (pw == 0) continue;
    for (std::size_t code = 0; code < states; ++code) {
      std::size_t next = 0;
      for (int v = n - 1; v >= 0; --v) {
        for (std::size_t j = 0; j < L.tab.fs; ++j) {
          std::size_t y = static_cast<std::size_t>(L.tab.state_nbr[v * L.tab.fs + j]);
          s[j] = static_cast<State>((code / ipow(q, static_cast<int>(y))) % q);
        }
        for (std::size_t j = 0; j < L.tab.fn; ++j) a[j] = w[L.tab.noise_nbr[v * L.tab.fn + j]];
        next = next * q + m.update(s.data(), a.data());
      }
      k[code][next] += pw;
    }
  }
  return k;
}

inline std::vector<double> left_multiply(const std::vector<double>& mu, const std::vector<std::vector<double>>& k) {
  std::vector<double> out(k.size(), 0.0);
  for (std::size_t a = 0; a < k.size(); ++a)
    for (std::size_t b = 0; b < k.size(); ++b) out[b] += mu[a] * k[a][b];
  return out;
}

inline double tv_distance(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw DomainError("tv_distance: size mismatch");
  double s = 0;
  for (std::size_t k = 0; k < p.size(); ++k) s += std::fabs(p[k] - q[k]);
  return 0.5 * s;
}

inline double max_abs_diff(const std::vector<double>& p, const std::vector<double>& q) {
  double m = 0;
  for (std::size_t k = 0; k < p.size(); ++k) m = std::max(m, std::fabs(p[k] - q[k]));
  return m;
}

template <class K>
using Histogram = std::unordered_map<K, std::uint64_t>;

template <class K>
std::uint64_t histogram_total(const Histogram<K>& h) {
  std::uint64_t n = 0;
  for (const auto& [k, c] : h) n += c;
  return n;
}

/// TV between an empirical histogram over codes and an exact vector.
inline double tv_to_exact(const Histogram<std::size_t>& h, const std::vector<double>& p) {
  const double n = static_cast<double>(histogram_total(h));
  double s = 0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    auto it = h.find(k);
    const double e = it == h.end() ? 0.0 : static_cast<double>(it->second) / n;
    s += std::fabs(e - p[k]);
  }
  for (const auto& [k, c] : h)
    if (k >= p.size()) s += static_cast<double>(c) / n;
  return 0.5 * s;
}

template <class K>
double tv_empirical(const Histogram<K>& a, const Histogram<K>& b) {
  const double na = static_cast<double>(histogram_total(a)), nb = static_cast<double>(histogram_total(b));
  double s = 0;
  for (const auto& [k, c] : a) {
    auto it = b.find(k);
    s += std::fabs(static_cast<double>(c) / na - (it == b.end() ? 0.0 : static_cast<double>(it->second) / nb));
  }
  for (const auto& [k, c] : b)
    if (!a.count(k)) s += static_cast<double>(c) / nb;
  return 0.5 * s;
}

struct Band {
  double lo = 0;
  double hi = 0;
  std::vector<double> null_tv;
  bool contains(double x) const { return x >= lo && x <= hi; }
  /// Share of null resamples at least as extreme as x (secondary to the band).
  double p_value(double x) const {
    std::size_t k = 0;
    for (double t : null_tv) k += t >= x;
    return (1.0 + static_cast<double>(k)) / (1.0 + static_cast<double>(null_tv.size()));
  }
};

namespace detail {

inline std::vector<std::uint64_t> multinomial(std::uint64_t n, const std::vector<double>& p, std::mt19937_64& rng) {
  std::vector<std::uint64_t> out(p.size(), 0);
  double rest = 1.0;
  std::uint64_t left = n;
  for (std::size_t k = 0; k < p.size() && left > 0; ++k) {
    if (k + 1 == p.size() || rest <= 0) {
      out[k] = left;
      break;
    }
    const double pr = std::clamp(p[k] / rest, 0.0, 1.0);
    std::binomial_distribution<std::uint64_t> bin(left, pr);
    out[k] = pr >= 1.0 ? left : bin(rng);
    left -= out[k];
    rest -= p[k];
  }
  return out;
}

inline double quantile(std::vector<double> xs, double q) {
  std::sort(xs.begin(), xs.end());
  const std::size_t idx = std::min(xs.size() - 1, static_cast<std::size_t>(std::ceil(q * xs.size())) - 1);
  return xs[idx];
}

}  // namespace detail

/**
 * Sampling-noise band for TV(empirical of size n, p): [0, q-quantile] of the TV between p and
 * multinomial resamples from p.
 */
inline Band tv_band_exact(const std::vector<double>& p, std::uint64_t n, int resamples = 1000,
                          std::uint64_t seed = 1, double q = 0.999) {
  std::mt19937_64 rng(seed);
  std::vector<double> tv;
  for (int r = 0; r < resamples; ++r) {
    auto c = detail::multinomial(n, p, rng);
    double s = 0;
    for (std::size_t k = 0; k < p.size(); ++k) s += std::fabs(static_cast<double>(c[k]) / n - p[k]);
    tv.push_back(0.5 * s);
  }
  const double hi = detail::quantile(tv, q);
  return {0.0, hi, std::move(tv)};
}

/// Two-sample band: resample both sizes from the pooled histogram.
template <class K>
Band tv_band_two_sample(const Histogram<K>& a, const Histogram<K>& b, int resamples = 1000, std::uint64_t seed = 1,
                        double q = 0.999) {
  std::unordered_map<K, std::size_t> idx;
  std::vector<double> pooled;
  for (const auto* h : {&a, &b})
    for (const auto& [k, c] : *h) {
      auto [it, fresh] = idx.emplace(k, pooled.size());
      if (fresh) pooled.push_back(0);
      pooled[it->second] += static_cast<double>(c);
    }
  double tot = 0;
  for (double x : pooled) tot += x;
  for (double& x : pooled) x /= tot;
  const std::uint64_t na = histogram_total(a), nb = histogram_total(b);
  std::mt19937_64 rng(seed);
  std::vector<double> tv;
  for (int r = 0; r < resamples; ++r) {
    auto ca = detail::multinomial(na, pooled, rng);
    auto cb = detail::multinomial(nb, pooled, rng);
    double s = 0;
    for (std::size_t k = 0; k < pooled.size(); ++k)
      s += std::fabs(static_cast<double>(ca[k]) / na - static_cast<double>(cb[k]) / nb);
    tv.push_back(0.5 * s);
  }
  const double hi = detail::quantile(tv, q);
  return {0.0, hi, std::move(tv)};
}

struct LinearFit {
  double slope = 0, intercept = 0, r2 = 0;
  bool applicable = false;
};

inline LinearFit least_squares(const std::vector<double>& x, const std::vector<double>& y) {
  LinearFit f;
  const std::size_t n = x.size();
  if (n < 3) return f;
  double mx = 0, my = 0;
  for (std::size_t k = 0; k < n; ++k) {
    mx += x[k];
    my += y[k];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t k = 0; k < n; ++k) {
    sxx += (x[k] - mx) * (x[k] - mx);
    sxy += (x[k] - mx) * (y[k] - my);
    syy += (y[k] - my) * (y[k] - my);
  }
  if (sxx == 0 || syy == 0) return f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double ss_res = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double e = y[k] - (f.intercept + f.slope * x[k]);
    ss_res += e * e;
  }
  f.r2 = syy == 0 ? 1.0 : 1.0 - ss_res / syy;
  f.applicable = true;
  return f;
}

struct TailFit {
  std::vector<double> survival;  // survival[n] = P(T > n)
  int fit_from = 0, fit_to = -1;
  /// log S(n) ~ intercept + slope * n
  LinearFit exponential;
  /// log(-log S(n)) ~ log C + c log n, i.e. S(n) ~ exp(-C n^c)
  LinearFit stretched;
  double quantile(double q) const {
    for (std::size_t k = 0; k < survival.size(); ++k)
      if (survival[k] <= 1 - q) return static_cast<double>(k);
    return static_cast<double>(survival.size());
  }
};

/// Survival curve and tail fits over the range where the survival is at least 10/N.
inline TailFit fit_tails(const std::vector<int>& samples) {
  TailFit t;
  if (samples.empty()) return t;
  const int mx = *std::max_element(samples.begin(), samples.end());
  std::vector<std::uint64_t> cnt(mx + 2, 0);
  for (int s : samples) {
    if (s < 0) throw DomainError("fit_tails: negative sample");
    ++cnt[s];
  }
  const double n = static_cast<double>(samples.size());
  double above = n;
  t.survival.resize(mx + 1);
  for (int k = 0; k <= mx; ++k) {
    above -= static_cast<double>(cnt[k]);
    t.survival[k] = above / n;
  }
  std::vector<double> xe, ye, xs, ys;
  const double floor_s = 10.0 / n;
  for (int k = 0; k <= mx; ++k) {
    const double s = t.survival[k];
    if (s < floor_s || s <= 0) break;
    if (t.fit_to < 0) t.fit_from = k;
    t.fit_to = k;
    xe.push_back(k);
    ye.push_back(std::log(s));
    if (k > 0 && s < 1) {
      xs.push_back(std::log(static_cast<double>(k)));
      ys.push_back(std::log(-std::log(s)));
    }
  }
  t.exponential = least_squares(xe, ye);
  t.stretched = least_squares(xs, ys);
  return t;
}

}  // namespace finicode
