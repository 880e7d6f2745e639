#pragma once

#include <cstdint>
#include <random>

#include "noc/tensor.hpp"

namespace noc {

/// All randomness flows through an explicitly passed engine of this type.
using Rng = std::mt19937_64;

inline Tensor gaussian_tensor(Shape shape, double sigma, Rng& rng) {
  Tensor t(std::move(shape));
  if (sigma == 0.0) return t;
  std::normal_distribution<double> dist(0.0, sigma);
  for (auto& v : t.data()) v = static_cast<float>(dist(rng));
  return t;
}

inline Tensor uniform_tensor(Shape shape, double lo, double hi, Rng& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.data()) v = static_cast<float>(dist(rng));
  return t;
}

/// Derives an independent stream seed from a base seed and a tag.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace noc
