#pragma once

#include <cstdint>
#include <random>

namespace horizonlab {

using Rng = std::mt19937_64;

/// Purpose-specific stream ids. A sub-seed is derived as
/// splitmix64(global_seed ^ splitmix64(stream)), so every consumer of
/// randomness can be re-run in isolation from the global seed alone.
enum class Stream : std::uint64_t {
  initial_state = 1,
  observation_noise = 2,
  model_init = 3,
  batch_order = 4,
  probe = 5,
  directions = 6,
  attractor = 7,
};

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, Stream stream, std::uint64_t index = 0) noexcept {
  return splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(stream) * 0x100000001B3ULL + index));
}

inline Rng make_rng(std::uint64_t seed, Stream stream, std::uint64_t index = 0) {
  return Rng(derive_seed(seed, stream, index));
}

}  // namespace horizonlab
