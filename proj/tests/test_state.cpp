#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "lvik/state.hpp"
#include "test_util.hpp"

using namespace lvik;

TEST_CASE("boxplus with zero is identity") {
  const NominalState x = test::random_state(7, 0);
  const NominalState y = state_boxplus(x, ErrorState::Zero());
  CHECK(state_boxminus(y, x).norm() < 1e-15);
}

TEST_CASE("pure translation block only shifts position") {
  const NominalState x = test::random_state(7, 1);
  ErrorState dx = ErrorState::Zero();
  dx.segment<3>(ErrorBlocks::kP) = Vec3(1, 0, 0);
  const NominalState y = state_boxplus(x, dx);
  CHECK((y.p_w - x.p_w - Vec3(1, 0, 0)).norm() == 0.0);
  CHECK((y.R_w.matrix() - x.R_w.matrix()).norm() == 0.0);
  CHECK((y.v_w - x.v_w).norm() == 0.0);
  CHECK((y.b_a - x.b_a).norm() == 0.0);
  CHECK(y.stamp == x.stamp);
}

TEST_CASE("boxplus/boxminus roundtrip within 1e-10") {
  for (uint64_t i = 0; i < 500; ++i) {
    const NominalState x = test::random_state(8, i);
    ErrorState dx;
    for (int k = 0; k < ErrorBlocks::kDim; ++k)
      dx[k] = 2.0 * test::uniform(9, 100 * i + k) - 1.0;
    // Keep all rotation blocks below pi in norm.
    using B = ErrorBlocks;
    for (int off : {B::kTheta, B::kThetaCl, B::kThetaCr}) {
      const double target = 0.95 * M_PI * test::uniform(19, 10 * i + off);
      if (dx.segment<3>(off).norm() > 1e-12)
        dx.segment<3>(off) *= target / dx.segment<3>(off).norm();
    }
    const NominalState y = state_boxplus(x, dx);
    CHECK((state_boxminus(y, x) - dx).norm() < 1e-10);
  }
}

TEST_CASE("boxminus of identical states is zero, vector blocks antisymmetric") {
  const NominalState x = test::random_state(10, 0);
  CHECK(state_boxminus(x, x).norm() < 1e-15);
  const NominalState y = test::random_state(10, 1);
  const ErrorState ab = state_boxminus(y, x);
  const ErrorState ba = state_boxminus(x, y);
  using B = ErrorBlocks;
  for (int off : {B::kP, B::kPCl, B::kPCr, B::kV, B::kBa, B::kBg}) {
    CHECK((ab.segment<3>(off) + ba.segment<3>(off)).norm() < 1e-12);
  }
}

TEST_CASE("non-finite increment rejected") {
  ErrorState dx = ErrorState::Zero();
  dx[5] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(state_boxplus(NominalState{}, dx), std::invalid_argument);
}

TEST_CASE("boxminus jacobian matches finite differences") {
  const NominalState x0 = test::random_state(11, 0);
  ErrorState d0;
  for (int k = 0; k < ErrorBlocks::kDim; ++k) d0[k] = 0.2 * test::normal(12, k);
  const NominalState x = state_boxplus(x0, d0);
  const CovMatrix J = boxminus_jacobian(x, x0);
  const MatX J_num = test::numeric_jacobian(
      ErrorBlocks::kDim, ErrorBlocks::kDim, [&](const VecX& d) -> VecX {
        return state_boxminus(state_boxplus(x, ErrorState(d)), x0);
      });
  CHECK((J - J_num).norm() / J.norm() < 1e-6);
}

TEST_CASE("sliding window invariants") {
  SlidingWindow w;
  w.capacity = 3;
  w.frames.resize(2);
  w.features[1] = {0, 0.5};
  CHECK_NOTHROW(w.check());
  w.features[2] = {5, 0.5};
  CHECK_THROWS_AS(w.check(), std::logic_error);
  w.features.erase(2);
  w.features[3] = {0, -1.0};
  CHECK_THROWS_AS(w.check(), std::logic_error);
}
