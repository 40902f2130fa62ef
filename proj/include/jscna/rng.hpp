#pragma once

#include <cstdint>
#include <random>

#include "jscna/tensor.hpp"

namespace jscna {

using Rng = std::mt19937_64;

/// Independent stream seed for sub-task `index` of a run seeded with `seed`
/// (splitmix64 finalizer over the pair).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline Tensor standard_normal(Shape shape, Rng& rng) {
  Tensor t(shape);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (double& v : t.values()) v = nd(rng);
  return t;
}

}  // namespace jscna
