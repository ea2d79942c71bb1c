#pragma once

#include <cstdint>
#include <random>

#include "gtc/linalg.hpp"
#include "gtc/matrix.hpp"

namespace gtc {

/// Every stochastic routine takes an explicit seed and owns its engine.
using Rng = std::mt19937_64;

inline Matrix gaussian_matrix(std::size_t rows, std::size_t cols, Rng& rng, double stddev = 1.0) {
  std::normal_distribution<double> normal(0.0, stddev);
  Matrix m(rows, cols);
  for (auto& v : m.values()) v = normal(rng);
  return m;
}

inline Vector gaussian_vector(std::size_t dim, Rng& rng, double stddev = 1.0) {
  std::normal_distribution<double> normal(0.0, stddev);
  Vector v(dim);
  for (auto& x : v) x = normal(rng);
  return v;
}

/// Uniform direction on the unit sphere.
inline Vector random_unit_vector(std::size_t dim, Rng& rng) {
  Vector v;
  double n = 0.0;
  do {
    v = gaussian_vector(dim, rng);
    n = norm2(v);
  } while (n == 0.0);
  for (auto& x : v) x /= n;
  return v;
}

/// rows × cols matrix with orthonormal columns (rows ≥ cols), Haar-distributed.
inline Matrix random_orthonormal(std::size_t rows, std::size_t cols, Rng& rng) {
  if (cols > rows) throw ValidationError("random_orthonormal needs rows >= cols");
  return linalg::orthonormal_q(gaussian_matrix(rows, cols, rng));
}

}  // namespace gtc
