// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "p2l/common.hpp"

#include <random>

namespace p2l {

using Rng = std::mt19937_64;

/// Derives an independent stream seed from a parent seed and a stream index
/// (splitmix64 finalizer).
[[nodiscard]] constexpr Seed derive_seed(Seed parent, std::uint64_t stream) {
  std::uint64_t z = parent + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

[[nodiscard]] inline Vector standard_normal(Index n, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = g(rng);
  return v;
}

[[nodiscard]] inline Matrix standard_normal(Index rows, Index cols, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix m(rows, cols);
  // Column-major fill; fixed order keeps draws reproducible.
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = g(rng);
  return m;
}

[[nodiscard]] inline Vector random_unit(Index n, Rng& rng) {
  Vector v = standard_normal(n, rng);
  const double norm = v.norm();
  return norm > 0.0 ? Vector(v / norm) : Vector(Vector::Unit(n, 0));
}

}  // namespace p2l
