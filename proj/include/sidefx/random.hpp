#pragma once

// Seeded helpers whose output is fixed across standard libraries.
// std::mt19937_64 is fully specified; the distributions are not, so index
// draws and shuffles are done by hand.

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace sidefx {

using Rng = std::mt19937_64;

// Uniform integer in [0, n) by rejection sampling.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = Rng::max() - (Rng::max() % n);
  std::uint64_t v;
  do {
    v = rng();
  } while (v >= limit);
  return v % n;
}

// Uniform real in [0, 1) from the top 53 bits.
inline double uniform_real(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

template <typename T>
void seeded_shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_index(rng, i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace sidefx
