#pragma once

#include <cstdint>
#include <random>

namespace eegcvae {

// All randomness in the library flows through explicitly passed Rng objects.
// Rng is the 64-bit Mersenne twister; independent sub-streams are obtained by
// hashing (seed, stream id) with SplitMix64, so any stream can be rebuilt from
// the root seed alone.
using Rng = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632BE59BD9B4E019ULL));
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  return Rng(derive_seed(seed, stream));
}

// Stream ids for pipeline stages. Changing these changes every derived seed.
namespace streams {
inline constexpr std::uint64_t kSynth = 1;
inline constexpr std::uint64_t kSplit = 2;
inline constexpr std::uint64_t kCvae = 3;
inline constexpr std::uint64_t kIsolatedBaseline = 4;
inline constexpr std::uint64_t kIsolatedVae = 5;
inline constexpr std::uint64_t kCtcBaseline = 6;
inline constexpr std::uint64_t kCtcVae = 7;
}  // namespace streams

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

}  // namespace eegcvae
