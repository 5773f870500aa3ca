#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "semrec/common.hpp"

namespace semrec {

// Deterministic, platform-independent generator (xoshiro256** seeded via
// splitmix64). All sampling primitives are hand-rolled so that a fixed seed
// yields an identical stream everywhere; std:: distributions are not portable.
class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t x = seed;
    for (auto& word : state_) word = splitmix64(x);
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller (cosine branch only; keeps one draw = two
  // uniforms, which makes streams easy to reason about).
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1], log stays finite
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Unbiased integer in [0, n) via bitmask rejection.
  int64_t uniform_int(int64_t n) {
    if (n <= 0) throw ConfigError("rng: uniform_int needs n > 0");
    uint64_t un = static_cast<uint64_t>(n);
    uint64_t mask = ~uint64_t{0} >> count_leading_zeros(un - 1 | 1);
    for (;;) {
      uint64_t v = next_u64() & mask;
      if (v < un) return static_cast<int64_t>(v);
    }
  }

  template <typename T>
  void shuffle(std::vector<T>& xs) {
    for (int64_t i = static_cast<int64_t>(xs.size()) - 1; i > 0; --i) {
      int64_t j = uniform_int(i + 1);
      std::swap(xs[static_cast<size_t>(i)], xs[static_cast<size_t>(j)]);
    }
  }

  // Index draw proportional to non-negative weights.
  int64_t categorical(const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) {
      if (w < 0.0) throw ConfigError("rng: categorical weight < 0");
      total += w;
    }
    if (total <= 0.0) throw ConfigError("rng: categorical weights sum to 0");
    double u = uniform() * total;
    double acc = 0.0;
    for (size_t i = 0; i < weights.size(); ++i) {
      acc += weights[i];
      if (u < acc) return static_cast<int64_t>(i);
    }
    return static_cast<int64_t>(weights.size()) - 1;
  }

  // Derived generator with an independent stream, e.g. one per epoch or user.
  Rng fork(uint64_t stream_id) {
    uint64_t mix = next_u64();
    return Rng(mix ^ (0x9e3779b97f4a7c15ULL * (stream_id + 1)));
  }

 private:
  static uint64_t splitmix64(uint64_t& x) {
    uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  static int count_leading_zeros(uint64_t x) {
    int n = 0;
    while (!(x & 0x8000000000000000ULL)) {
      x <<= 1;
      ++n;
    }
    return n;
  }

  uint64_t state_[4];
};

}  // namespace semrec
