#pragma once

#include <cstdint>
#include <random>

namespace sparsebody {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent generator for (seed, step, stream). Every random draw in
/// training goes through one of these, so results do not depend on the order
/// in which consumers run.
inline std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t step, std::uint64_t stream) {
  return std::mt19937_64(splitmix64(splitmix64(splitmix64(seed) ^ step) ^ stream));
}

}  // namespace sparsebody
