#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace doconv {

using Rng = std::mt19937_64;

// splitmix64 finalizer; decorrelates derived stream seeds.
inline std::uint64_t mix_seed(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Independent substream seed for (base, stream, index). Reproducible by construction.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index = 0) {
  return mix_seed(base ^ mix_seed(stream ^ mix_seed(index)));
}

// Uniform in [0,1) from the top 53 bits. We avoid std::uniform_real_distribution
// and std::normal_distribution: their output is implementation-defined and the
// training contract is bit-reproducible given a seed.
inline double uniform01(Rng& g) { return static_cast<double>(g() >> 11) * 0x1.0p-53; }

inline double uniform(Rng& g, double lo, double hi) { return lo + (hi - lo) * uniform01(g); }

// Standard normal via Box-Muller.
inline double randn(Rng& g) {
  double u1;
  do {
    u1 = uniform01(g);
  } while (u1 <= 0.0);
  const double u2 = uniform01(g);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

inline std::size_t randint(Rng& g, std::size_t n) { return static_cast<std::size_t>(g() % n); }

// Fisher-Yates with our own randint, fixed visit order.
template <typename T>
void shuffle_indices(std::vector<T>& v, Rng& g) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[randint(g, i)]);
  }
}

}  // namespace doconv
