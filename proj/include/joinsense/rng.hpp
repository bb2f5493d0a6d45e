#pragma once

// Deterministic, platform-independent randomness.
//
// Every consumer draws from its own stream, derived from (master seed, purpose
// tag, key...) via splitmix64 folding. Per-stream generators are xoshiro256++,
// seeded from splitmix64 output. Nothing here depends on libstdc++ distribution
// internals, so sequences are bit-identical across compilers and platforms.

#include <cstdint>
#include <cmath>
#include <initializer_list>
#include <string_view>
#include <vector>

namespace joinsense {

constexpr std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Folds a sequence of keys into one 64-bit stream seed. Order-sensitive.
inline std::uint64_t fold_keys(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  std::uint64_t state = seed;
  (void)splitmix64(state);
  for (std::uint64_t k : keys) {
    state ^= k + 0x9e3779b97f4a7c15ULL + (state << 6) + (state >> 2);
    (void)splitmix64(state);
  }
  return state;
}

// FNV-1a over bytes; used for token hashing and query fingerprints.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& word : s_) word = splitmix64(sm);
  }

  static Rng stream(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
    return Rng(fold_keys(seed, keys));
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform double in [0, 1) with 53 random bits.
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n) via Lemire's multiply-shift rejection; n ≥ 1.
  std::uint64_t bounded(std::uint64_t n) {
    __uint128_t m = static_cast<__uint128_t>(next_u64()) * n;
    auto lo = static_cast<std::uint64_t>(m);
    if (lo < n) {
      const std::uint64_t threshold = (0ULL - n) % n;
      while (lo < threshold) {
        m = static_cast<__uint128_t>(next_u64()) * n;
        lo = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  std::uint64_t s_[4];
};

// Purpose tags keeping unrelated streams disjoint under one master seed.
namespace stream_tag {
constexpr std::uint64_t kGenerator = 0xA1;
constexpr std::uint64_t kWalk = 0xA2;       // (tag, E mask, comp mask, group key, walk index)
constexpr std::uint64_t kFilterWalk = 0xA3; // (tag, E mask, comp mask, 0, walk index)
constexpr std::uint64_t kNoise = 0xA4;      // (tag, query fingerprint, mechanism, eps bits)
constexpr std::uint64_t kXi = 0xA5;         // (tag, depth, column, family id)
}  // namespace stream_tag

// Zipf(skew) sampler over ranks 1..n mapped to {0..n-1}; skew=0 degenerates to
// uniform. Inverse-CDF over a precomputed cumulative table (domain sizes here
// are small; clarity and determinism beat a rejection scheme).
class ZipfSampler {
 public:
  ZipfSampler(std::uint64_t n, double skew) : cdf_(n) {
    double total = 0.0;
    for (std::uint64_t r = 1; r <= n; ++r) total += 1.0 / std::pow(static_cast<double>(r), skew);
    double acc = 0.0;
    for (std::uint64_t r = 1; r <= n; ++r) {
      acc += 1.0 / std::pow(static_cast<double>(r), skew) / total;
      cdf_[r - 1] = acc;
    }
    cdf_.back() = 1.0;
  }

  std::uint64_t sample(Rng& rng) const {
    const double u = rng.next_unit();
    std::uint64_t lo = 0, hi = cdf_.size() - 1;
    while (lo < hi) {
      const std::uint64_t mid = (lo + hi) / 2;
      if (cdf_[mid] < u) lo = mid + 1; else hi = mid;
    }
    return lo;
  }

 private:
  std::vector<double> cdf_;
};

}  // namespace joinsense
