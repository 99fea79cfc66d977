#pragma once

#include <stdexcept>
#include <vector>

#include "lvik/state.hpp"

namespace lvik {

inline const Vec3 kGravity{0.0, 0.0, -9.81};

struct ImuSample {
  double stamp = 0.0;
  Vec3 accel = Vec3::Zero();  // specific force, body frame
  Vec3 gyro = Vec3::Zero();   // body frame
};

/// Continuous-time white-noise densities and bias random walks.
struct ImuNoise {
  double sigma_a = 0.02;     // m/s^2 / sqrt(Hz)
  double sigma_g = 0.002;    // rad/s / sqrt(Hz)
  double sigma_ba = 0.001;   // m/s^2 * sqrt(Hz) random walk
  double sigma_bg = 0.0001;  // rad/s * sqrt(Hz) random walk
};

/// Propagated states recorded between two corrections; deskewing and
/// preintegration anchors interpolate into this.
class PropagationBuffer {
 public:
  struct Entry {
    double stamp;
    Pose3 pose;
    Vec3 velocity;
  };

  void reset(double stamp, const Pose3& pose, const Vec3& velocity) {
    entries_.clear();
    entries_.push_back({stamp, pose, velocity});
  }
  void push(double stamp, const Pose3& pose, const Vec3& velocity) {
    entries_.push_back({stamp, pose, velocity});
  }

  bool empty() const { return entries_.empty(); }
  double front_stamp() const { return entries_.front().stamp; }
  double back_stamp() const { return entries_.back().stamp; }
  const std::vector<Entry>& entries() const { return entries_; }

  /// Pose/velocity at t: linear interpolation for translation and velocity,
  /// geodesic for rotation. Throws out_of_range outside the buffer span.
  std::pair<Pose3, Vec3> pose_at(double t) const;

 private:
  std::vector<Entry> entries_;
};

/// One discrete error-state propagation step. Integrates the nominal state
/// with bias-corrected measurements and fixed gravity, updates the
/// covariance as F P F^T + Q, and appends the result to the buffer.
void imu_propagate(NominalState& state, CovMatrix& cov, const ImuSample& s, double dt,
                   const ImuNoise& noise, PropagationBuffer* buffer = nullptr);

/// Midpoint of two bracketing samples for one propagation step, with the
/// second-order coning correction on the gyro (the averaged rate alone
/// accumulates a systematic error when the rotation axis itself rotates).
inline ImuSample midpoint_sample(const ImuSample& a, const ImuSample& b, double dt) {
  ImuSample mid;
  mid.stamp = a.stamp;
  mid.accel = 0.5 * (a.accel + b.accel);
  mid.gyro = 0.5 * (a.gyro + b.gyro) + (dt / 12.0) * a.gyro.cross(b.gyro);
  return mid;
}

/// Gravity-free relative motion between two stamps with first-order bias
/// Jacobians. Covariance over [dtheta, dv, dp, dba, dbg].
struct ImuPreintegration {
  Rot3 dR;
  Vec3 dv = Vec3::Zero();
  Vec3 dp = Vec3::Zero();
  MatN<15, 15> cov = MatN<15, 15>::Zero();
  Mat3 dR_dbg = Mat3::Zero();
  Mat3 dv_dba = Mat3::Zero();
  Mat3 dv_dbg = Mat3::Zero();
  Mat3 dp_dba = Mat3::Zero();
  Mat3 dp_dbg = Mat3::Zero();
  Vec3 bias_a = Vec3::Zero();  // linearization point
  Vec3 bias_g = Vec3::Zero();
  double duration = 0.0;

  /// Integrate one sample held over dt.
  void integrate(const ImuSample& s, double dt, const ImuNoise& noise);

  /// Mean corrected to first order for a bias differing from the
  /// linearization point.
  Rot3 corrected_dR(const Vec3& bg) const {
    return dR * Rot3::exp(dR_dbg * (bg - bias_g));
  }
  Vec3 corrected_dv(const Vec3& ba, const Vec3& bg) const {
    return dv + dv_dba * (ba - bias_a) + dv_dbg * (bg - bias_g);
  }
  Vec3 corrected_dp(const Vec3& ba, const Vec3& bg) const {
    return dp + dp_dba * (ba - bias_a) + dp_dbg * (bg - bias_g);
  }
};

/// Preintegrate a time-ordered sample list. Each sample is held until the
/// next stamp; the last one until t_end (<= 0 means "until the last stamp",
/// contributing nothing).
ImuPreintegration imu_preintegrate(const std::vector<ImuSample>& samples,
                                   const Vec3& bias_a, const Vec3& bias_g,
                                   const ImuNoise& noise, double t_end = -1.0);

}  // namespace lvik
