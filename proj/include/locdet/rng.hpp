#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace locdet {

// Deterministic random source. The mt19937_64 engine is fully specified by
// the standard; the distribution code below is pinned here so sampled values
// depend only on the seed, never on the standard library's distribution
// implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Uniform integer in [lo, hi], inclusive. Unbiased via rejection.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<int64_t>(next_u64());  // full 64-bit range
    uint64_t x, r;
    do {
      x = next_u64();
      r = x % span;
    } while (x - r > UINT64_MAX - (span - 1));
    return lo + static_cast<int64_t>(r);
  }

  // Standard normal via Box-Muller; stateless (no cached second value), two
  // draws per call.
  double normal() {
    double u1 = 1.0 - uniform01();  // (0, 1]
    double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Derived independent stream; advances this generator by one draw.
  Rng fork(uint64_t tag) {
    uint64_t x = next_u64() ^ (0x9e3779b97f4a7c15ull * (tag + 1));
    // splitmix64 finalizer
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return Rng(x);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace locdet
