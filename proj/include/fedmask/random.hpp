#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fedmask {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives an independent stream seed from a parent seed and a path of ids,
/// e.g. derive_seed(master, {repetition, participant, phase}).
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = splitmix64(seed);
  for (std::uint64_t p : path) h = splitmix64(h ^ splitmix64(p + 0x632be59bd9b4e019ULL));
  return h;
}

// Phase ids used when deriving per-participant streams.
namespace phase {
inline constexpr std::uint64_t partition = 1;
inline constexpr std::uint64_t local_clustering = 2;
inline constexpr std::uint64_t federated = 3;
inline constexpr std::uint64_t proxy = 4;
inline constexpr std::uint64_t triplets = 5;
inline constexpr std::uint64_t baseline = 6;
}  // namespace phase

}  // namespace fedmask
