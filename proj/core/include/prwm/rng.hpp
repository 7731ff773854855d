#pragma once
#include <cstdint>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string_view>

namespace prwm {

// splitmix64 step; used for seeding and for deriving labelled child streams.
inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// xoshiro256** with explicit algorithms for every draw, so streams are
// bit-reproducible across platforms and standard library versions.
class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t sm = seed;
    for (auto& s : s_) s = splitmix64(sm);
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform double in [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi], both ends inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    if (hi < lo) throw std::invalid_argument("uniform_int: hi < lo");
    uint64_t span = uint64_t(hi - lo) + 1;
    return lo + int64_t(next_u64() % span);
  }

  // Standard normal via Box-Muller; caches the second draw.
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = 1.0 - uniform();  // (0, 1], keeps log() finite
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * std::numbers::pi * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Draws an index from an unnormalized non-negative weight vector.
  int categorical(const double* w, int n) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += w[i];
    if (!(total > 0.0)) throw std::domain_error("categorical: weights sum to zero");
    double u = uniform() * total;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      acc += w[i];
      if (u < acc) return i;
    }
    return n - 1;  // numerical edge: u == total
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  uint64_t s_[4];
  double cached_ = 0.0;
  bool has_cached_ = false;
};

// Derives an independent child seed from a base seed and a label path.
// Labels keep unrelated streams (init, schedule, rollouts, ...) decoupled so
// adding draws to one phase never perturbs another.
inline uint64_t derive_seed(uint64_t base, std::string_view label) {
  uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a over the label
  for (char ch : label) {
    h ^= uint8_t(ch);
    h *= 0x100000001b3ull;
  }
  uint64_t s = base ^ h;
  uint64_t out = splitmix64(s);
  out ^= splitmix64(s);
  return out;
}
inline uint64_t derive_seed(uint64_t base, std::string_view label, uint64_t a) {
  uint64_t s = derive_seed(base, label) ^ (a + 0x9e3779b97f4a7c15ull);
  return splitmix64(s);
}
inline uint64_t derive_seed(uint64_t base, std::string_view label, uint64_t a, uint64_t b) {
  uint64_t s = derive_seed(base, label, a) ^ (b * 0xbf58476d1ce4e5b9ull + 1);
  return splitmix64(s);
}

}  // namespace prwm
