#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pca.hpp"

namespace finicode {

/// Activation coin at the center and none at the 2D neighbors.
template <class Noise>
bool isolated_active(const Noise* a, int nbrs) {
  if (!a[0].coin) return false;
  for (int k = 1; k <= nbrs; ++k)
    if (a[k].coin) return false;
  return true;
}

/**
 * Ising PCA. States 0 and 1 stand for spins -1 and +1.
 *
 * Noise is (coin, psi) with coin ~ Bernoulli(act) and psi in {-2D, ..., 2D+1}, where
 * P(psi <= k) = p_k = e^{beta k} / (e^{beta k} + e^{-beta k}) for |k| <= 2D. An active site with
 * no active neighbor becomes +1 iff psi <= sum of neighbor spins.
 */
template <int D>
class IsingModel {
 public:
  static constexpr int dim = D;
  struct Noise {
    std::uint8_t coin = 0;
    std::uint8_t psi = 0;  // psi value is psi - 2D
  };

  explicit IsingModel(double beta, double act = 0.5) : beta_(beta), act_(act), offs_(star_offsets<D>()) {
    if (!(act > 0 && act < 1)) throw DomainError("activation probability must lie in (0,1)");
    std::vector<long double> psi_cdf;
    for (int k = -2 * D; k <= 2 * D; ++k) psi_cdf.push_back(p(k));
    psi_cdf.push_back(1.0L);
    psi_ = AlphabetDistribution::from_cdf(psi_cdf);
    std::vector<long double> joint;
    long double acc = 0;
    for (int c = 0; c < 2; ++c) {
      const long double pc = c ? static_cast<long double>(act) : 1.0L - static_cast<long double>(act);
      long double prev = 0;
      for (std::size_t j = 0; j < psi_cdf.size(); ++j) {
        acc += pc * (psi_cdf[j] - prev);
        prev = psi_cdf[j];
        joint.push_back(acc);
      }
    }
    joint.back() = 1.0L;
    joint_ = AlphabetDistribution::from_cdf(joint);
  }

  /// p_k in extended precision.
  long double p(int k) const {
    const long double b = static_cast<long double>(beta_) * k;
    return 1.0L / (1.0L + std::exp(-2.0L * b));
  }

  double beta() const { return beta_; }
  double activation() const { return act_; }
  int num_states() const { return 2; }
  const std::vector<Site<D>>& state_offsets() const { return offs_; }
  const std::vector<Site<D>>& noise_offsets() const { return offs_; }
  static int spin(State s) { return s ? 1 : -1; }

  const AlphabetDistribution& psi_distribution() const { return psi_; }
  AlphabetDistribution noise_alphabet() const { return joint_; }
  Noise decode_noise(std::uint32_t k) const {
    const std::uint32_t m = 4 * D + 2;
    return Noise{static_cast<std::uint8_t>(k / m), static_cast<std::uint8_t>(k % m)};
  }
  std::uint32_t encode_noise(const Noise& a) const { return a.coin * (4 * D + 2) + a.psi; }

  Noise noise(const SpaceTimeRandomSource<D>& src, const Site<D>& v, int t) const {
    return decode_noise(joint_.sample(src.uniform(v, t)));
  }

  /// (noise with the given private part, probability); the coin is filled in by the caller.
  std::vector<std::pair<Noise, double>> private_alphabet() const {
    std::vector<std::pair<Noise, double>> out;
    for (std::size_t j = 0; j < psi_.size(); ++j)
      out.push_back({Noise{0, static_cast<std::uint8_t>(j)}, psi_.prob(j)});
    return out;
  }

  State update(const State* s, const Noise* a) const {
    if (!isolated_active(a, 2 * D)) return s[0];
    int sum = 0;
    for (int k = 1; k <= 2 * D; ++k) sum += spin(s[k]);
    return threshold(a[0], sum);
  }

  StateSet update_set(const StateSet* s, const Noise* a) const {
    if (!isolated_active(a, 2 * D)) return s[0];
    int lo = 0, hi = 0;
    for (int k = 1; k <= 2 * D; ++k) {
      lo += (s[k] & 1) ? -1 : 1;
      hi += (s[k] & 2) ? 1 : -1;
    }
    const State a_lo = threshold(a[0], lo), a_hi = threshold(a[0], hi);
    return singleton(a_lo) | singleton(a_hi);
  }

 private:
  static State threshold(const Noise& a, int sum) { return static_cast<int>(a.psi) - 2 * D <= sum ? 1 : 0; }

  double beta_, act_;
  std::vector<Site<D>> offs_;
  AlphabetDistribution psi_;
  AlphabetDistribution joint_;
};

/**
 * Proper q-colorings PCA. An active site with no active neighbor takes the first color of a
 * uniform random permutation pi that no neighbor holds.
 *
 * Only the first 2D+1 entries of pi can ever be consulted, so the noise carries that prefix.
 */
template <int D>
class ColoringsModel {
 public:
  static constexpr int dim = D;
  static constexpr int prefix_len = 2 * D + 1;
  struct Noise {
    std::uint8_t coin = 0;
    std::array<std::uint8_t, prefix_len> prefix{};
  };

  explicit ColoringsModel(int q, double act = 0.5) : q_(q), act_(act), offs_(star_offsets<D>()) {
    if (q < prefix_len) throw DomainError("colorings need q >= 2d+1");
    if (q > 64) throw DomainError("colorings support at most 64 colors");
    if (!(act > 0 && act < 1)) throw DomainError("activation probability must lie in (0,1)");
    prefixes_ = 1;
    for (int j = 0; j < prefix_len; ++j) prefixes_ *= static_cast<double>(q - j);
  }

  /// Proven-mixing regime is q >= 4d(d+1); below it sampling still runs but may be slow.
  std::optional<std::string> warning() const {
    if (q_ < 4 * D * (D + 1))
      return "q=" + std::to_string(q_) + " is below 4d(d+1)=" + std::to_string(4 * D * (D + 1));
    return std::nullopt;
  }

  int q() const { return q_; }
  double activation() const { return act_; }
  int num_states() const { return q_; }
  const std::vector<Site<D>>& state_offsets() const { return offs_; }
  const std::vector<Site<D>>& noise_offsets() const { return offs_; }
  double prefix_count() const { return prefixes_; }

  /// Prefix of rank r (mixed radix q, q-1, ...).
  std::array<std::uint8_t, prefix_len> unrank(std::uint64_t r) const {
    std::array<std::uint8_t, 64> avail{};
    for (int c = 0; c < q_; ++c) avail[c] = static_cast<std::uint8_t>(c);
    std::array<std::uint8_t, prefix_len> out{};
    int left = q_;
    for (int j = 0; j < prefix_len; ++j) {
      const int idx = static_cast<int>(r % left);
      r /= left;
      out[j] = avail[idx];
      avail[idx] = avail[left - 1];
      --left;
    }
    return out;
  }

  Noise noise(const SpaceTimeRandomSource<D>& src, const Site<D>& v, int t) const {
    const double u = src.uniform(v, t);
    Noise a;
    if (u >= act_) return a;
    a.coin = 1;
    auto r = static_cast<std::uint64_t>(u / act_ * prefixes_);
    if (r >= static_cast<std::uint64_t>(prefixes_)) r = static_cast<std::uint64_t>(prefixes_) - 1;
    a.prefix = unrank(r);
    return a;
  }

  /// Symbol 0 is an idle site, symbol 1+r an active site with prefix rank r.
  AlphabetDistribution noise_alphabet() const {
    if (prefixes_ > 1e6) throw DomainError("colorings noise alphabet too large to tabulate");
    std::vector<double> w{1.0 - act_};
    for (std::uint64_t r = 0; r < static_cast<std::uint64_t>(prefixes_); ++r) w.push_back(act_ / prefixes_);
    return AlphabetDistribution::from_weights(w);
  }
  Noise decode_noise(std::uint32_t k) const {
    Noise a;
    if (k == 0) return a;
    a.coin = 1;
    a.prefix = unrank(k - 1);
    return a;
  }

  std::vector<std::pair<Noise, double>> private_alphabet() const {
    std::vector<std::pair<Noise, double>> out;
    for (std::uint64_t r = 0; r < static_cast<std::uint64_t>(prefixes_); ++r) {
      Noise a;
      a.prefix = unrank(r);
      out.push_back({a, 1.0 / prefixes_});
    }
    return out;
  }

  /// g(D, pi): first entry of pi outside the color set `used`.
  static State first_free(StateSet used, const std::array<std::uint8_t, prefix_len>& pi) {
    for (auto c : pi)
      if (!(used & singleton(c))) return c;
    throw Error("colorings: neighborhood exhausted the permutation prefix");
  }

  State update(const State* s, const Noise* a) const {
    if (!isolated_active(a, 2 * D)) return s[0];
    StateSet used = 0;
    for (int k = 1; k <= 2 * D; ++k) used |= singleton(s[k]);
    return first_free(used, a[0].prefix);
  }

  /// Union of g over every neighbor selection consistent with the sets.
  StateSet update_set(const StateSet* s, const Noise* a) const {
    if (!isolated_active(a, 2 * D)) return s[0];
    StateSet out = 0;
    const auto& pi = a[0].prefix;
    for (int j = 0; j < prefix_len; ++j) {
      const StateSet c = singleton(pi[j]);
      bool avoidable = true;
      for (int k = 1; k <= 2 * D; ++k) avoidable = avoidable && s[k] != c;
      if (!avoidable) continue;
      if (coverable(s, pi, j, 0, 0)) out |= c;
    }
    return out;
  }

 private:
  // Can pi[0..j-1] be assigned to distinct neighbors whose sets contain them?
  static bool coverable(const StateSet* s, const std::array<std::uint8_t, prefix_len>& pi, int j, int next,
                        unsigned used_mask) {
    if (next == j) return true;
    const StateSet c = singleton(pi[next]);
    for (int k = 1; k <= 2 * D; ++k) {
      if ((used_mask >> k) & 1u) continue;
      if (!(s[k] & c)) continue;
      if (coverable(s, pi, j, next + 1, used_mask | (1u << k))) return true;
    }
    return false;
  }

  int q_;
  double act_;
  std::vector<Site<D>> offs_;
  double prefixes_;
};

/**
 * PCA built from a local kernel P(s | xi), xi the neighbor configuration, updated with the
 * multigamma split: with probability gamma the new state ignores xi.
 */
template <int D>
class HighNoiseModel {
 public:
  static constexpr int dim = D;
  struct Noise {
    std::uint8_t coin = 0;
    double u = 0;
  };

  /// rows[xi] is P(. | xi); xi encodes neighbor states base |S| with the first neighbor least significant.
  HighNoiseModel(int num_states, std::vector<std::vector<double>> rows, double act = 0.5)
      : s_(num_states), act_(act), offs_(star_offsets<D>()), rows_(std::move(rows)) {
    if (num_states < 1 || num_states > 64) throw DomainError("high-noise: state count out of range");
    if (!(act > 0 && act < 1)) throw DomainError("activation probability must lie in (0,1)");
    std::size_t expect = 1;
    for (int k = 0; k < 2 * D; ++k) expect *= static_cast<std::size_t>(s_);
    if (rows_.size() != expect) throw DomainError("high-noise: kernel needs |S|^(2d) rows");
    for (auto& r : rows_) {
      if (static_cast<int>(r.size()) != s_) throw DomainError("high-noise: row length must be |S|");
      double tot = 0;
      for (double x : r) {
        if (!(x >= 0)) throw DomainError("high-noise: negative probability");
        tot += x;
      }
      if (std::fabs(tot - 1) > 1e-9) throw DomainError("high-noise: row does not sum to 1");
      for (double& x : r) x /= tot;
    }
    gamma_s_.assign(s_, 1.0);
    for (const auto& r : rows_)
      for (int s = 0; s < s_; ++s) gamma_s_[s] = std::min(gamma_s_[s], r[s]);
    gamma_ = 0;
    for (double g : gamma_s_) gamma_ += g;
    if (gamma_ <= 0) throw DomainError("high-noise: gamma = 0, kernel has no common mass");
    cum_gamma_.resize(s_);
    double acc = 0;
    for (int s = 0; s < s_; ++s) cum_gamma_[s] = (acc += gamma_s_[s]);
    cum_resid_.resize(rows_.size());
    for (std::size_t x = 0; x < rows_.size(); ++x) {
      double a = gamma_;
      for (int s = 0; s < s_; ++s) {
        a += std::max(0.0, rows_[x][s] - gamma_s_[s]);
        cum_resid_[x].push_back(a);
      }
    }
  }

  /// Table for the Ising heat-bath conditional on Z^D.
  static HighNoiseModel ising(double beta, double act = 0.5) {
    std::vector<std::vector<double>> rows;
    const std::size_t n = std::size_t{1} << (2 * D);
    for (std::size_t x = 0; x < n; ++x) {
      int sum = 0;
      for (int k = 0; k < 2 * D; ++k) sum += ((x >> k) & 1) ? 1 : -1;
      const double pp = 1.0 / (1.0 + std::exp(-2.0 * beta * sum));
      rows.push_back({1.0 - pp, pp});
    }
    return HighNoiseModel(2, std::move(rows), act);
  }

  /// CSV lines "x_1,...,x_2d,s,prob"; missing entries are zero.
  static HighNoiseModel from_csv(const std::string& path, int num_states, double act = 0.5) {
    std::ifstream in(path);
    if (!in) throw DomainError("high-noise: cannot open kernel file " + path);
    std::size_t nrows = 1;
    for (int k = 0; k < 2 * D; ++k) nrows *= static_cast<std::size_t>(num_states);
    std::vector<std::vector<double>> rows(nrows, std::vector<double>(num_states, 0.0));
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::stringstream ss(line);
      std::vector<double> f;
      std::string cell;
      bool numeric = true;
      while (numeric && std::getline(ss, cell, ',')) {
        char* end = nullptr;
        const double x = std::strtod(cell.c_str(), &end);
        numeric = end != cell.c_str();
        f.push_back(x);
      }
      if (!numeric) {
        if (f.size() == 1) continue;  // header line
        throw DomainError("high-noise: malformed kernel line: " + line);
      }
      if (static_cast<int>(f.size()) != 2 * D + 2) throw DomainError("high-noise: malformed kernel line: " + line);
      std::size_t x = 0, mul = 1;
      for (int k = 0; k < 2 * D; ++k) {
        x += static_cast<std::size_t>(f[k]) * mul;
        mul *= static_cast<std::size_t>(num_states);
      }
      rows.at(x).at(static_cast<std::size_t>(f[2 * D])) = f[2 * D + 1];
    }
    return HighNoiseModel(num_states, std::move(rows), act);
  }

  int num_states() const { return s_; }
  double activation() const { return act_; }
  const std::vector<Site<D>>& state_offsets() const { return offs_; }
  const std::vector<Site<D>>& noise_offsets() const { return offs_; }
  double gamma() const { return gamma_; }
  double gamma_s(int s) const { return gamma_s_[s]; }
  bool high_noise() const { return gamma_ > 1.0 - 1.0 / (2.0 * D); }
  double kernel(std::size_t xi, int s) const { return rows_[xi][s]; }
  std::size_t rows() const { return rows_.size(); }
  /// Residual law (P(s|xi) - gamma_s) / (1 - gamma).
  double residual(std::size_t xi, int s) const {
    return gamma_ >= 1 ? 0.0 : std::max(0.0, rows_[xi][s] - gamma_s_[s]) / (1.0 - gamma_);
  }

  Noise noise(const SpaceTimeRandomSource<D>& src, const Site<D>& v, int t) const {
    const double w = src.uniform(v, t);
    if (w >= act_) return Noise{0, 0.0};
    return Noise{1, w / act_};
  }

  /// Private u on the intervals where the update is constant, one representative each.
  std::vector<std::pair<Noise, double>> private_alphabet() const {
    std::vector<double> cuts{0.0, 1.0};
    for (double c : cum_gamma_) cuts.push_back(c);
    for (const auto& r : cum_resid_)
      for (double c : r) cuts.push_back(c);
    std::sort(cuts.begin(), cuts.end());
    std::vector<std::pair<Noise, double>> out;
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
      const double a = cuts[k], b = std::min(cuts[k + 1], 1.0);
      if (b - a <= 0) continue;
      out.push_back({Noise{0, 0.5 * (a + b)}, b - a});
    }
    return out;
  }

  std::size_t row_index(const State* s) const {
    std::size_t x = 0, mul = 1;
    for (int k = 1; k <= 2 * D; ++k) {
      x += s[k] * mul;
      mul *= static_cast<std::size_t>(s_);
    }
    return x;
  }

  State draw(std::size_t xi, double u) const {
    if (u < gamma_) return pick(cum_gamma_, u);
    return pick(cum_resid_[xi], u);
  }

  State update(const State* s, const Noise* a) const {
    if (!isolated_active(a, 2 * D)) return s[0];
    return draw(row_index(s), a[0].u);
  }

  /// Singleton on a free draw; otherwise the union of residual draws over consistent neighbors.
  StateSet update_set(const StateSet* s, const Noise* a) const {
    if (!isolated_active(a, 2 * D)) return s[0];
    const double u = a[0].u;
    if (u < gamma_) return singleton(pick(cum_gamma_, u));
    StateSet out = 0;
    std::array<State, 2 * D + 1> cur{};
    enumerate(s, 1, cur, [&](const State* x) { out |= singleton(pick(cum_resid_[row_index(x)], u)); });
    return out;
  }

 private:
  template <class F>
  void enumerate(const StateSet* s, int k, std::array<State, 2 * D + 1>& cur, F&& f) const {
    if (k > 2 * D) {
      f(cur.data());
      return;
    }
    for (int c = 0; c < s_; ++c) {
      if (!(s[k] & singleton(static_cast<State>(c)))) continue;
      cur[k] = static_cast<State>(c);
      enumerate(s, k + 1, cur, f);
    }
  }

  State pick(const std::vector<double>& cum, double u) const {
    for (int s = 0; s < s_; ++s)
      if (u < cum[s]) return static_cast<State>(s);
    for (int s = s_ - 1; s >= 0; --s)
      if (s == 0 || cum[s] > cum[s - 1]) return static_cast<State>(s);
    return 0;
  }

  int s_;
  double act_;
  std::vector<Site<D>> offs_;
  std::vector<std::vector<double>> rows_;
  std::vector<double> gamma_s_;
  double gamma_;
  std::vector<double> cum_gamma_;
  std::vector<std::vector<double>> cum_resid_;
};

}  // namespace finicode
