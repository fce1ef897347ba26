#pragma once

#include <sodium.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <memory>
#include <numeric>
#include <vector>

#include "spacetime.hpp"

namespace finicode {

/// Finite distribution on {0, ..., K-1}, sampled by inverse CDF from a single uniform.
class AlphabetDistribution {
 public:
  AlphabetDistribution() : AlphabetDistribution(std::vector<long double>{1.0L}) {}

  static AlphabetDistribution uniform(std::size_t k) {
    if (k == 0) throw DomainError("empty alphabet");
    return AlphabetDistribution(std::vector<long double>(k, 1.0L));
  }
  static AlphabetDistribution from_weights(const std::vector<double>& w) {
    return AlphabetDistribution(std::vector<long double>(w.begin(), w.end()));
  }
  /// Cumulative values c_0 <= c_1 <= ... <= c_{K-1} = 1 given directly (kept in long double).
  static AlphabetDistribution from_cdf(std::vector<long double> cdf) {
    if (cdf.empty()) throw DomainError("empty alphabet");
    std::vector<long double> w(cdf.size());
    long double prev = 0;
    for (std::size_t k = 0; k < cdf.size(); ++k) {
      if (cdf[k] < prev) throw DomainError("cdf must be non-decreasing");
      w[k] = cdf[k] - prev;
      prev = cdf[k];
    }
    if (std::fabs(static_cast<double>(prev - 1.0L)) > 1e-12) throw DomainError("cdf must end at 1");
    AlphabetDistribution d(std::move(w));
    d.cdf_ = std::move(cdf);
    d.cdf_.back() = 1.0L;
    return d;
  }

  std::size_t size() const { return prob_.size(); }
  double prob(std::size_t k) const { return static_cast<double>(prob_[k]); }
  long double cdf(std::size_t k) const { return cdf_[k]; }
  const std::vector<long double>& probabilities() const { return prob_; }

  std::uint32_t sample(double u) const {
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), static_cast<long double>(u));
    if (it == cdf_.end()) --it;
    return static_cast<std::uint32_t>(it - cdf_.begin());
  }

 private:
  explicit AlphabetDistribution(std::vector<long double> w) {
    if (w.empty()) throw DomainError("empty alphabet");
    long double total = 0;
    for (auto x : w) {
      if (!(x >= 0)) throw DomainError("negative weight");
      total += x;
    }
    if (total <= 0) throw DomainError("weights sum to zero");
    prob_.resize(w.size());
    cdf_.resize(w.size());
    long double acc = 0;
    for (std::size_t k = 0; k < w.size(); ++k) {
      prob_[k] = w[k] / total;
      acc += prob_[k];
      cdf_[k] = acc;
    }
    cdf_.back() = 1.0L;
  }

  std::vector<long double> prob_;
  std::vector<long double> cdf_;
};

namespace detail {

inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline void sodium_ready() {
  static const bool ok = sodium_init() >= 0;
  if (!ok) throw Error("libsodium initialisation failed");
}

}  // namespace detail

/**
 * Counter-based i.i.d. field X_{v,i} over Z^D x Z.
 *
 * Every draw is SipHash-2-4 of (v, i, word) under a key built from (seed, stream), so a value
 * depends only on its coordinates and may be re-read any number of times in any order.
 */
template <int D>
class SpaceTimeRandomSource {
 public:
  explicit SpaceTimeRandomSource(std::uint64_t seed, AlphabetDistribution dist = AlphabetDistribution::uniform(2),
                                 std::uint64_t stream = 0)
      : seed_(seed), stream_(stream), dist_(std::make_shared<const AlphabetDistribution>(std::move(dist))) {
    detail::sodium_ready();
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }
  const AlphabetDistribution& distribution() const { return *dist_; }

  /// Independent field with the same seed and perturbation pattern.
  SpaceTimeRandomSource substream(std::uint64_t tag) const {
    SpaceTimeRandomSource s = *this;
    s.stream_ = detail::mix64(stream_ ^ detail::mix64(tag + 0x632be59bd9b4e019ULL));
    return s;
  }

  SpaceTimeRandomSource with_distribution(AlphabetDistribution dist) const {
    SpaceTimeRandomSource s = *this;
    s.dist_ = std::make_shared<const AlphabetDistribution>(std::move(dist));
    return s;
  }

  /// Agrees with this source at |v - center|_1 <= radius and is re-randomised elsewhere.
  SpaceTimeRandomSource perturb_outside(const Site<D>& center, int radius, std::uint64_t salt = 1) const {
    SpaceTimeRandomSource s = *this;
    s.regions_.push_back({center, radius, false, detail::mix64(salt ^ 0xa0761d6478bd642fULL)});
    return s;
  }
  /// Agrees with this source at |v - center|_1 > radius and is re-randomised inside.
  SpaceTimeRandomSource perturb_inside(const Site<D>& center, int radius, std::uint64_t salt = 1) const {
    SpaceTimeRandomSource s = *this;
    s.regions_.push_back({center, radius, true, detail::mix64(salt ^ 0xe7037ed1a0b428dbULL)});
    return s;
  }

  std::uint64_t bits(const Site<D>& v, int i, std::uint32_t word = 0) const {
    std::uint64_t key_words[2] = {seed_, stream_};
    for (const auto& r : regions_) {
      const bool in = l1_norm<D>(v - r.center) <= r.radius;
      if (in == r.inside) key_words[0] = detail::mix64(key_words[0] ^ r.salt);
    }
    std::int64_t msg[D + 2];
    for (int k = 0; k < D; ++k) msg[k] = v[k];
    msg[D] = i;
    msg[D + 1] = word;
    unsigned char key[crypto_shorthash_siphash24_KEYBYTES];
    std::memcpy(key, key_words, sizeof key);
    std::uint64_t out;
    crypto_shorthash_siphash24(reinterpret_cast<unsigned char*>(&out), reinterpret_cast<const unsigned char*>(msg),
                               sizeof msg, key);
    return out;
  }

  /// Uniform on [0,1) from the top 53 bits.
  double uniform(const Site<D>& v, int i, std::uint32_t word = 0) const {
    return static_cast<double>(bits(v, i, word) >> 11) * 0x1.0p-53;
  }

  /// Symbol X_{v,i} drawn from the source distribution.
  std::uint32_t draw(const Site<D>& v, int i) const { return dist_->sample(uniform(v, i, 0)); }

 private:
  struct Region {
    Site<D> center;
    int radius;
    bool inside;
    std::uint64_t salt;
  };

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::shared_ptr<const AlphabetDistribution> dist_;
  std::vector<Region> regions_;
};

}  // namespace finicode
