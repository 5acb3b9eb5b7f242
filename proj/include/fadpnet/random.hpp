#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace fadp {

// Deterministic RNG used everywhere. mt19937_64 is fully specified by the
// standard, and we generate all variates through explicit transforms so the
// stream does not depend on libstdc++ distribution internals.
class RandomEngine {
 public:
  explicit RandomEngine(uint64_t seed) : gen_(seed) {}

  uint64_t raw() { return gen_(); }

  // 53-bit mantissa uniform in [0, 1).
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller, one variate per call (the paired variate is discarded so the
  // consumed stream length is independent of call parity).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Standard Gumbel(0,1): -log(-log(U)), U in (0,1).
  double gumbel() {
    double u = uniform();
    if (u < 1e-300) u = 1e-300;
    return -std::log(-std::log(u));
  }

  // Uniform integer in [0, n).
  int64_t randint(int64_t n) {
    return static_cast<int64_t>(gen_() % static_cast<uint64_t>(n));
  }

  bool bernoulli(double p) { return uniform() < p; }

  // splitmix64 finalizer; used to derive independent sub-streams from
  // (seed, purpose, counter) tuples so resume never replays or skips noise.
  static uint64_t mix(uint64_t a, uint64_t b) {
    uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace fadp
