#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <type_traits>

namespace durastack {

using Rng = std::mt19937_64;

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// FNV-1a, 64 bit.
constexpr std::uint64_t fnv1a64(std::string_view s,
                                std::uint64_t h = 0xCBF29CE484222325ull) noexcept {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

/// Derives an independent child seed from a parent seed and any number of
/// integer or string tags. Order of tags matters.
inline std::uint64_t derive_seed(std::uint64_t seed) noexcept { return mix64(seed); }

template <typename Tag, typename... Rest>
std::uint64_t derive_seed(std::uint64_t seed, const Tag& tag, const Rest&... rest) noexcept {
  std::uint64_t t;
  if constexpr (std::is_convertible_v<const Tag&, std::string_view>) {
    t = fnv1a64(std::string_view(tag));
  } else {
    t = static_cast<std::uint64_t>(tag);
  }
  return derive_seed(mix64(seed ^ mix64(t)), rest...);
}

/// Uniform double in [0, 1) from the top 53 bits.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Uniform integer in [0, n); n must be positive.
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n));
}

/// Standard normal draw (Marsaglia polar method, one value per call).
inline double standard_normal(Rng& rng) {
  double u, v, s;
  do {
    u = 2.0 * uniform01(rng) - 1.0;
    v = 2.0 * uniform01(rng) - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  return u * std::sqrt(-2.0 * std::log(s) / s);
}

}  // namespace durastack
