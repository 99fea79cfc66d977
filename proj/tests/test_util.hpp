#pragma once

#include <functional>

#include "lvik/rng.hpp"
#include "lvik/so3.hpp"
#include "lvik/state.hpp"

namespace lvik::test {

// Deterministic draws for tests; stream 900+ keeps them away from the
// simulator's channels.
inline double uniform(uint64_t seed, uint64_t i) { return rng::uniform(seed, 900, i); }
inline double normal(uint64_t seed, uint64_t i) { return rng::normal(seed, 901, i); }

inline Vec3 random_vec(uint64_t seed, uint64_t i, double scale = 1.0) {
  return scale * Vec3(2.0 * uniform(seed, 3 * i) - 1.0, 2.0 * uniform(seed, 3 * i + 1) - 1.0,
                      2.0 * uniform(seed, 3 * i + 2) - 1.0);
}

inline Rot3 random_rotation(uint64_t seed, uint64_t i, double max_angle = 3.0) {
  Vec3 axis = random_vec(seed, 1000 + i);
  if (axis.norm() < 1e-9) axis = Vec3::UnitX();
  const double angle = max_angle * uniform(seed, 2000 + i);
  return Rot3::exp(axis.normalized() * angle);
}

inline NominalState random_state(uint64_t seed, uint64_t i) {
  NominalState x;
  x.R_w = random_rotation(seed, 10 * i);
  x.p_w = random_vec(seed, 10 * i + 1, 5.0);
  x.ext_cl.rotation = random_rotation(seed, 10 * i + 2, 0.5);
  x.ext_cl.translation = random_vec(seed, 10 * i + 3, 0.3);
  x.ext_cr.rotation = random_rotation(seed, 10 * i + 4, 0.5);
  x.ext_cr.translation = random_vec(seed, 10 * i + 5, 0.3);
  x.v_w = random_vec(seed, 10 * i + 6, 2.0);
  x.b_a = random_vec(seed, 10 * i + 7, 0.1);
  x.b_g = random_vec(seed, 10 * i + 8, 0.01);
  return x;
}

// Central-difference Jacobian of f: R^n -> R^m around zero.
inline MatX numeric_jacobian(int m, int n, const std::function<VecX(const VecX&)>& f,
                             double eps = 1e-6) {
  MatX J(m, n);
  for (int c = 0; c < n; ++c) {
    VecX dp = VecX::Zero(n), dm = VecX::Zero(n);
    dp[c] = eps;
    dm[c] = -eps;
    J.col(c) = (f(dp) - f(dm)) / (2.0 * eps);
  }
  return J;
}

}  // namespace lvik::test
