#pragma once

#include <cmath>
#include <random>

#include "hjbac/problems/problem.hpp"

namespace hjbac::pde {

/// Isotropic unit direction from a normalized standard Gaussian.
template <typename Rng>
Vector sample_direction(int d, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(d);
  double norm = 0.0;
  do {
    for (int i = 0; i < d; ++i) v[i] = normal(rng);
    norm = v.norm();
  } while (norm == 0.0);
  return v / norm;
}

/// Uniform point in the open ball: direction times R U^(1/d).
template <typename Rng>
Vector sample_initial(const BallDomain& domain, int d, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const Vector dir = sample_direction(d, rng);
  const double r = domain.radius * std::pow(unif(rng), 1.0 / d);
  return r * dir;
}

/// Uniform point on the sphere of radius R.
template <typename Rng>
Vector sample_boundary(const BallDomain& domain, int d, Rng& rng) {
  return domain.radius * sample_direction(d, rng);
}

template <typename Rng>
Matrix sample_initial_batch(const BallDomain& domain, int d, int count, Rng& rng) {
  Matrix x(d, count);
  for (int j = 0; j < count; ++j) x.col(j) = sample_initial(domain, d, rng);
  return x;
}

template <typename Rng>
Matrix sample_boundary_batch(const BallDomain& domain, int d, int count, Rng& rng) {
  Matrix x(d, count);
  for (int j = 0; j < count; ++j) x.col(j) = sample_boundary(domain, d, rng);
  return x;
}

}  // namespace hjbac::pde
