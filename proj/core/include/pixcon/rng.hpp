#pragma once

#include <cstdint>
#include <limits>
#include <random>

namespace pixcon {

using Rng = std::mt19937_64;

// SplitMix64 finalizer; used to derive independent stream seeds from
// (base seed, step, stream) tuples so that skipping one stream never shifts
// the draws of another.
constexpr std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0,
                                 std::uint64_t c = 0) noexcept {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1) + 0xBF58476D1CE4E5B9ULL * (c + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Uniform on the open interval (0, 1).
inline double uniform_open(Rng& rng) {
  return std::uniform_real_distribution<double>(
      std::numeric_limits<double>::min(), 1.0)(rng);
}

inline int uniform_int(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

inline bool bernoulli(Rng& rng, double p) {
  return std::bernoulli_distribution(p)(rng);
}

}  // namespace pixcon
