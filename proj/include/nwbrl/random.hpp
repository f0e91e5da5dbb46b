#pragma once

#include <cstdint>
#include <random>

#include "nwbrl/linalg.hpp"

namespace nwbrl {

using Rng = std::mt19937_64;

inline Matrix standard_normal(Index rows, Index cols, Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Matrix z(rows, cols);
  for (Index i = 0; i < z.size(); ++i) z.data()[i] = n01(rng);
  return z;
}

// SplitMix64 finalizer; used to derive independent stream seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  return mix_seed(mix_seed(base) ^ mix_seed(stream + 0x632be59bd9b4e019ULL));
}

}  // namespace nwbrl
