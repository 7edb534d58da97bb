#pragma once

#include <cstdint>
#include <random>

namespace gbs {

// SplitMix64 finalizer; used to derive independent stream seeds.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Seed of item `index` in a stream rooted at `seed`. Order independent.
inline uint64_t derive_seed(uint64_t seed, uint64_t index) {
  return mix64(mix64(seed) ^ mix64(index + 0x632be59bd9b4e019ULL));
}

// Thin wrapper over mt19937_64 with draws defined in terms of raw engine
// output, so any sequence can be replayed exactly from the seed:
//   uniform()     = (next() >> 11) * 2^-53            in [0, 1)
//   below(n)      = floor(uniform() * n)              in [0, n)
//   uniform(a, b) = a + (b - a) * uniform()
//   normal()      = Box-Muller on two uniform() draws (cosine branch)
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next() { return engine_(); }

  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::size_t below(std::size_t n) {
    auto k = static_cast<std::size_t>(uniform() * static_cast<double>(n));
    return k < n ? k : n - 1;
  }

  bool bernoulli(double p) { return uniform() < p; }

  double normal();

 private:
  std::mt19937_64 engine_;
};

}  // namespace gbs
