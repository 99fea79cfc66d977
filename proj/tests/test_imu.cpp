#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Eigenvalues>

#include "lvik/imu.hpp"
#include "test_util.hpp"

using namespace lvik;

namespace {

ImuNoise zero_noise() { return {0.0, 0.0, 0.0, 0.0}; }

}  // namespace

TEST_CASE("static robot: gravity cancels exactly") {
  NominalState x;
  CovMatrix P = CovMatrix::Zero();
  ImuSample s{0.0, Vec3(0, 0, 9.81), Vec3::Zero()};
  for (int i = 0; i < 200; ++i) {
    s.stamp = i * 0.005;
    imu_propagate(x, P, s, 0.005, zero_noise());
    CHECK(x.p_w.norm() < 1e-12);
    CHECK(x.v_w.norm() < 1e-12);
  }
}

TEST_CASE("free fall") {
  NominalState x;
  CovMatrix P = CovMatrix::Zero();
  imu_propagate(x, P, {0.0, Vec3::Zero(), Vec3::Zero()}, 0.01, zero_noise());
  CHECK(x.v_w.z() == doctest::Approx(-9.81 * 0.01).epsilon(1e-12));
}

TEST_CASE("constant yaw rate integrates to closed form") {
  NominalState x;
  x.v_w = Vec3::Zero();
  CovMatrix P = CovMatrix::Zero();
  const ImuSample s{0.0, Vec3(0, 0, 9.81), Vec3(0, 0, 1.0)};
  double t = 0.0;
  while (t < 1.0 - 1e-9) {
    // Gravity-cancelling specific force rotates with the body; emulate a
    // robot spinning in place.
    ImuSample si = s;
    si.accel = x.R_w.matrix().transpose() * Vec3(0, 0, 9.81);
    imu_propagate(x, P, si, 0.005, zero_noise());
    t += 0.005;
  }
  const Vec3 phi = x.R_w.log();
  CHECK(std::abs(phi.z() - 1.0) < 1e-4);
  CHECK(std::abs(phi.x()) < 1e-9);
}

TEST_CASE("propagate rejects bad inputs") {
  NominalState x;
  CovMatrix P = CovMatrix::Zero();
  CHECK_THROWS_AS(imu_propagate(x, P, {}, 0.0, zero_noise()), std::invalid_argument);
  CovMatrix bad = CovMatrix::Zero();
  bad(0, 1) = 1.0;
  CHECK_THROWS_AS(imu_propagate(x, bad, {}, 0.01, zero_noise()),
                  std::invalid_argument);
}

TEST_CASE("covariance stays symmetric PSD over many steps") {
  NominalState x;
  CovMatrix P = CovMatrix::Identity() * 1e-6;
  ImuNoise noise;  // defaults
  for (uint64_t i = 0; i < 100000; ++i) {
    ImuSample s;
    s.accel = Vec3(0, 0, 9.81) + test::random_vec(61, i, 0.5);
    s.gyro = test::random_vec(62, i, 0.3);
    imu_propagate(x, P, s, 0.005, noise);
  }
  CHECK((P - P.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  Eigen::SelfAdjointEigenSolver<CovMatrix> eig(P);
  CHECK(eig.eigenvalues().minCoeff() > -1e-12);
}

TEST_CASE("zero noise keeps a zero covariance") {
  NominalState x;
  CovMatrix P = CovMatrix::Zero();
  for (int i = 0; i < 1000; ++i) {
    imu_propagate(x, P, {0.0, Vec3(0.1, 0, 9.8), Vec3(0.01, 0.02, 0.3)}, 0.005,
                  zero_noise());
  }
  CHECK(P.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("buffer interpolation") {
  PropagationBuffer buf;
  buf.reset(0.0, Pose3{Rot3(), Vec3(0, 0, 0)}, Vec3(1, 0, 0));
  buf.push(1.0, Pose3{Rot3::exp(Vec3(0, 0, 0.2)), Vec3(2, 0, 0)}, Vec3(3, 0, 0));

  SUBCASE("stored stamp returns stored pose") {
    const auto [pose, vel] = buf.pose_at(1.0);
    CHECK((pose.translation - Vec3(2, 0, 0)).norm() == 0.0);
    CHECK((vel - Vec3(3, 0, 0)).norm() == 0.0);
  }
  SUBCASE("midpoint translation is the mean") {
    const auto [pose, vel] = buf.pose_at(0.5);
    CHECK((pose.translation - Vec3(1, 0, 0)).norm() < 1e-12);
    CHECK((vel - Vec3(2, 0, 0)).norm() < 1e-12);
  }
  SUBCASE("rotation interpolates on the geodesic") {
    const auto [pose, vel] = buf.pose_at(0.5);
    CHECK((pose.rotation.matrix() - so3_exp(Vec3(0, 0, 0.1))).norm() < 1e-12);
  }
  SUBCASE("outside span throws") {
    CHECK_THROWS_AS(buf.pose_at(1.5), std::out_of_range);
    CHECK_THROWS_AS(buf.pose_at(-0.5), std::out_of_range);
  }
}

TEST_CASE("preintegration of zero measurements is identity") {
  std::vector<ImuSample> samples;
  for (int i = 0; i < 10; ++i) samples.push_back({i * 0.01, Vec3::Zero(), Vec3::Zero()});
  const auto pre = imu_preintegrate(samples, Vec3::Zero(), Vec3::Zero(), zero_noise(), 0.1);
  CHECK((pre.dR.matrix() - Mat3::Identity()).norm() == 0.0);
  CHECK(pre.dv.norm() == 0.0);
  CHECK(pre.dp.norm() == 0.0);
  CHECK(pre.duration == doctest::Approx(0.1));
  CHECK_THROWS_AS(imu_preintegrate({}, Vec3::Zero(), Vec3::Zero(), zero_noise()),
                  std::invalid_argument);
}

namespace {

// Replays the same segment with per-sample white noise; returns the error
// vector (dtheta, dv, dp) of the noisy preintegration against the clean one.
VecN<9> noisy_replay_error(const std::vector<ImuSample>& clean,
                           const ImuPreintegration& ref, const ImuNoise& noise,
                           double t_end, uint64_t seed, uint64_t replay) {
  std::vector<ImuSample> noisy = clean;
  for (size_t k = 0; k < noisy.size(); ++k) {
    const double dt =
        (k + 1 < noisy.size() ? noisy[k + 1].stamp : t_end) - noisy[k].stamp;
    const double sd_a = noise.sigma_a / std::sqrt(dt);
    const double sd_g = noise.sigma_g / std::sqrt(dt);
    for (int ax = 0; ax < 3; ++ax) {
      noisy[k].accel[ax] += sd_a * rng::normal(seed, rng::kMonteCarlo, replay * 10000 + 6 * k + ax);
      noisy[k].gyro[ax] +=
          sd_g * rng::normal(seed, rng::kMonteCarlo, replay * 10000 + 6 * k + 3 + ax);
    }
  }
  const auto pre = imu_preintegrate(noisy, Vec3::Zero(), Vec3::Zero(),
                                    ImuNoise{0, 0, 0, 0}, t_end);
  VecN<9> err;
  err.segment<3>(0) = so3_log(ref.dR.matrix().transpose() * pre.dR.matrix());
  err.segment<3>(3) = pre.dv - ref.dv;
  err.segment<3>(6) = pre.dp - ref.dp;
  return err;
}

}  // namespace

TEST_CASE("preintegration covariance matches Monte Carlo within 10%") {
  // 0.5 s mixed-motion segment at 200 Hz.
  std::vector<ImuSample> clean;
  for (int k = 0; k < 100; ++k) {
    const double t = k * 0.005;
    clean.push_back({t,
                     Vec3(1.5 * std::sin(7 * t), -0.8 * std::cos(5 * t), 9.81 + 0.5 * std::sin(3 * t)),
                     Vec3(0.6 * std::cos(4 * t), 0.4 * std::sin(6 * t), 0.8)});
  }
  const double t_end = 0.5;
  ImuNoise noise;
  noise.sigma_a = 0.05;
  noise.sigma_g = 0.01;
  noise.sigma_ba = 0.0;
  noise.sigma_bg = 0.0;

  const auto ref = imu_preintegrate(clean, Vec3::Zero(), Vec3::Zero(), noise, t_end);

  const int n_mc = 10000;
  MatN<9, 9> sample_cov = MatN<9, 9>::Zero();
  VecN<9> mean = VecN<9>::Zero();
  std::vector<VecN<9>> errs(n_mc);
  for (int r = 0; r < n_mc; ++r) {
    errs[r] = noisy_replay_error(clean, ref, noise, t_end, 77, r);
    mean += errs[r];
  }
  mean /= n_mc;
  for (const auto& e : errs) sample_cov += (e - mean) * (e - mean).transpose();
  sample_cov /= n_mc - 1;

  const MatN<9, 9> prop = ref.cov.topLeftCorner<9, 9>();
  const double rel = (sample_cov - prop).norm() / prop.norm();
  CHECK(rel < 0.10);
}

TEST_CASE("bias jacobians match re-preintegration to first order") {
  std::vector<ImuSample> samples;
  for (int k = 0; k < 100; ++k) {
    const double t = k * 0.005;
    samples.push_back({t, Vec3(1.0 * std::sin(3 * t), 0.5, 9.5), Vec3(0.3, -0.2, 0.5)});
  }
  const double t_end = 0.5;
  const Vec3 ba(0.02, -0.01, 0.03), bg(0.002, 0.001, -0.003);
  const auto ref = imu_preintegrate(samples, ba, bg, zero_noise(), t_end);

  const double delta = 1e-4;
  for (int ax = 0; ax < 3; ++ax) {
    Vec3 dba = Vec3::Zero(), dbg = Vec3::Zero();
    dba[ax] = delta;
    dbg[ax] = delta;

    const auto re_a = imu_preintegrate(samples, ba + dba, bg, zero_noise(), t_end);
    CHECK((re_a.dv - ref.corrected_dv(ba + dba, bg)).norm() < 10 * delta * delta);
    CHECK((re_a.dp - ref.corrected_dp(ba + dba, bg)).norm() < 10 * delta * delta);

    const auto re_g = imu_preintegrate(samples, ba, bg + dbg, zero_noise(), t_end);
    CHECK((so3_log(ref.corrected_dR(bg + dbg).matrix().transpose() *
                   re_g.dR.matrix()))
              .norm() < 10 * delta * delta);
    CHECK((re_g.dv - ref.corrected_dv(ba, bg + dbg)).norm() < 10 * delta * delta);
    CHECK((re_g.dp - ref.corrected_dp(ba, bg + dbg)).norm() < 10 * delta * delta);
  }
}
