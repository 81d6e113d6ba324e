#pragma once

#include <cstdint>
#include <random>

namespace flsim {

using Rng = std::mt19937_64;

// splitmix64 finalizer
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Named random streams. Each purpose gets its own tag so that, e.g., client
/// training randomness never shares a stream with partitioning.
enum class Stream : std::uint64_t {
  kInit = 1,
  kPartition = 2,
  kSelection = 3,
  kClient = 4,
  kMalicious = 5,
  kDetector = 6,
  kInjection = 7,
  kData = 8,
};

/// seed = mix(mix(mix(master ^ mix(stream)) ^ a) ^ b). Changing `a` or `b`
/// for one consumer never perturbs the stream of another.
constexpr std::uint64_t derive_seed(std::uint64_t master, Stream stream, std::uint64_t a = 0,
                                    std::uint64_t b = 0) {
  return mix64(mix64(mix64(master ^ mix64(static_cast<std::uint64_t>(stream))) ^ a) ^ b);
}

/// Client randomness for (client, round).
constexpr std::uint64_t client_seed(std::uint64_t master, int client, int round) {
  return derive_seed(master, Stream::kClient, static_cast<std::uint64_t>(client),
                     static_cast<std::uint64_t>(round));
}

/// Fisher-Yates shuffle driven by raw 64-bit draws, so the permutation does
/// not depend on the standard library's distribution implementations.
template <typename Vec>
void shuffle(Vec& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

/// Uniform double in [0, 1) from the top 53 bits of one draw.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace flsim
