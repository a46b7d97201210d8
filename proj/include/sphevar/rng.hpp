#pragma once

#include <cstdint>
#include <random>

namespace sphevar {

/// Random stream used everywhere in the library. Every stream is created
/// from an explicit seed; there is no global generator.
using Rng = std::mt19937_64;

/// splitmix64 finalizer; a bijective 64-bit mix.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Seed of substream `index` under `master`. Distinct indices give
/// statistically independent streams; the map is deterministic.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) noexcept {
  return mix64(mix64(master) ^ mix64(index + 0x632be59bd9b4e019ULL));
}

inline Rng make_stream(std::uint64_t master, std::uint64_t index = 0) {
  return Rng{derive_seed(master, index)};
}

}  // namespace sphevar
