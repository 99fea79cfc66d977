#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "lvik/eval.hpp"
#include "test_util.hpp"

using namespace lvik;

namespace {

Trajectory random_trajectory(uint64_t seed, size_t n, double dt = 0.1) {
  Trajectory traj;
  Vec3 p = Vec3::Zero();
  Rot3 R;
  for (size_t i = 0; i < n; ++i) {
    p += test::random_vec(seed, 2 * i, 0.3);
    R = R * Rot3::exp(test::random_vec(seed, 2 * i + 1, 0.1));
    traj.push_back({static_cast<double>(i) * dt, Pose3{R, p}});
  }
  return traj;
}

}  // namespace

TEST_CASE("identical trajectories: identity alignment, zero errors") {
  const Trajectory t = random_trajectory(601, 50);
  const Pose3 T = umeyama_align(t, t);
  CHECK(T.translation.norm() < 1e-12);
  CHECK((T.rotation.matrix() - Mat3::Identity()).norm() < 1e-12);
  CHECK(ate_rmse(t, t) == 0.0);
  CHECK(rpe_rmse(t, t, 1) == 0.0);
}

TEST_CASE("alignment recovers a known rigid transform") {
  const Trajectory gt = random_trajectory(602, 100);
  const Pose3 T{test::random_rotation(603, 0), Vec3(3.0, -2.0, 1.5)};
  const Trajectory est = apply_transform(T, gt);  // est = T * gt
  const Pose3 R = umeyama_align(est, gt);
  // R must invert T.
  const Pose3 should_be_identity = R * T;
  CHECK(should_be_identity.translation.norm() < 1e-9);
  CHECK((should_be_identity.rotation.matrix() - Mat3::Identity()).norm() < 1e-9);
  CHECK(ate_rmse(apply_transform(R, est), gt) < 1e-9);
}

TEST_CASE("n larger than the trajectory clamps without error") {
  const Trajectory gt = random_trajectory(604, 20);
  CHECK_NOTHROW(umeyama_align(gt, gt, 500));
}

TEST_CASE("insufficient data throws") {
  const Trajectory t = random_trajectory(605, 2);
  CHECK_THROWS_AS(umeyama_align(t, t), std::invalid_argument);
  CHECK_THROWS_AS(ate_rmse({}, {}), std::invalid_argument);
}

TEST_CASE("constant offset without alignment gives ATE of the offset") {
  const Trajectory gt = random_trajectory(606, 50);
  Trajectory est = gt;
  for (auto& sp : est) sp.pose.translation += Vec3(1, 0, 0);
  CHECK(ate_rmse(est, gt) == doctest::Approx(1.0).epsilon(1e-12));
  // RPE ignores a constant offset.
  CHECK(rpe_rmse(est, gt, 1) < 1e-9);
}

TEST_CASE("metrics agree with an independent straightforward implementation") {
  const Trajectory gt = random_trajectory(607, 100);
  Trajectory est = gt;
  for (size_t i = 0; i < est.size(); ++i) {
    est[i].pose.translation += test::random_vec(608, i, 0.05);
    est[i].pose.rotation = est[i].pose.rotation * Rot3::exp(test::random_vec(609, i, 0.02));
  }

  // Independent ATE: plain loop over equal indices (stamps match exactly).
  double acc = 0.0;
  for (size_t i = 0; i < est.size(); ++i)
    acc += (est[i].pose.translation - gt[i].pose.translation).squaredNorm();
  const double ate_ref = std::sqrt(acc / est.size());
  CHECK(ate_rmse(est, gt) == doctest::Approx(ate_ref).epsilon(1e-9));

  // Independent RPE with stride 3: relative translations via full 4x4-style
  // composition written out by hand.
  const int delta = 3;
  acc = 0.0;
  size_t cnt = 0;
  for (size_t i = 0; i + delta < est.size(); ++i) {
    const Mat3 Re = est[i].pose.rotation.matrix();
    const Vec3 te = est[i].pose.translation;
    const Vec3 de = Re.transpose() * (est[i + delta].pose.translation - te);
    const Mat3 Rg = gt[i].pose.rotation.matrix();
    const Vec3 tg = gt[i].pose.translation;
    const Vec3 dg = Rg.transpose() * (gt[i + delta].pose.translation - tg);
    acc += (de - dg).squaredNorm();
    ++cnt;
  }
  const double rpe_ref = std::sqrt(acc / cnt);
  CHECK(rpe_rmse(est, gt, delta) == doctest::Approx(rpe_ref).epsilon(1e-9));
}

TEST_CASE("ATE is invariant under a common rigid transform") {
  const Trajectory gt = random_trajectory(610, 60);
  Trajectory est = gt;
  for (size_t i = 0; i < est.size(); ++i)
    est[i].pose.translation += test::random_vec(611, i, 0.1);
  const double base = ate_rmse(est, gt);
  const Pose3 T{test::random_rotation(612, 0), Vec3(5, 5, -2)};
  CHECK(ate_rmse(apply_transform(T, est), apply_transform(T, gt)) ==
        doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("alignment is a local minimum of the RMSE") {
  const Trajectory gt = random_trajectory(613, 80);
  Trajectory est = gt;
  for (size_t i = 0; i < est.size(); ++i)
    est[i].pose.translation += test::random_vec(614, i, 0.2);
  const Pose3 T = umeyama_align(est, gt, 80);
  const double best = ate_rmse(apply_transform(T, est), gt);
  for (uint64_t k = 0; k < 100; ++k) {
    Pose3 P{Rot3::exp(test::random_vec(615, k, 0.05)), test::random_vec(616, k, 0.05)};
    const double perturbed = ate_rmse(apply_transform(P * T, est), gt);
    CHECK(perturbed >= best - 1e-12);
  }
}

TEST_CASE("association matches nearest stamps within the window") {
  Trajectory est, gt;
  for (int i = 0; i < 10; ++i) gt.push_back({0.1 * i, Pose3{}});
  est.push_back({0.1999, Pose3{}});   // 0.2 is nearest, within 10 ms
  est.push_back({0.35, Pose3{}});     // 50 ms from both: dropped
  const auto pairs = associate(est, gt, 0.01);
  REQUIRE(pairs.size() == 1);
  CHECK(pairs[0].second == 2);
}
