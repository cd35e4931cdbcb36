#pragma once

#include <cstdint>
#include <random>

namespace dentseg {

using Rng = std::mt19937_64;

// SplitMix64 finalizer. Used to derive decorrelated per-index substreams
// from one master seed, so sample i is reproducible regardless of the
// order or parallelism of generation.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline Rng substream(std::uint64_t master, std::uint64_t index) {
  return Rng(splitmix64(master ^ splitmix64(index + 0x51ed2701a9e5a3d5ULL)));
}

}  // namespace dentseg
