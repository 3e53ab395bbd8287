#pragma once

#include <cstdint>

namespace isolab {

// SplitMix64; the single deterministic generator behind all sampling.
struct Rng {
  uint64_t state;
  explicit Rng(uint64_t seed = 0x9e3779b97f4a7c15ull) : state(seed) {}

  uint64_t next() {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }
  // uniform in [0,1)
  double uniform() { return double(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  int uniform_int(int lo, int hi) {  // inclusive bounds
    return lo + int(next() % uint64_t(hi - lo + 1));
  }
};

}  // namespace isolab
