#pragma once

#include <array>
#include <optional>
#include <stdexcept>
#include <vector>

#include "lvik/state.hpp"

namespace lvik {

constexpr int kNumLegs = 4;

struct JointSample {
  double stamp = 0.0;
  // Per leg: hip abduction, hip flexion, knee; plus rates.
  std::array<Vec3, kNumLegs> q;
  std::array<Vec3, kNumLegs> qdot;
};

/// Foot angular/linear velocity in the foot frame, with measurement stds.
struct FootTwist {
  double stamp = 0.0;
  int leg = 0;
  Vec3 omega_xi = Vec3::Zero();
  Vec3 nu_xi = Vec3::Zero();
  double sigma_omega = 0.05;
  double sigma_nu = 0.05;
};

/// 3-link legs: abduction about body x at the hip, then two pitch joints.
/// Left legs carry the lateral hip link at +y, right legs at -y.
struct LegGeometry {
  std::array<Vec3, kNumLegs> hip_offset = {
      Vec3(0.183, 0.047, 0.0), Vec3(0.183, -0.047, 0.0),
      Vec3(-0.183, 0.047, 0.0), Vec3(-0.183, -0.047, 0.0)};
  double l_hip = 0.08;
  double l_thigh = 0.213;
  double l_calf = 0.213;

  double lateral_sign(int leg) const { return (leg % 2 == 0) ? 1.0 : -1.0; }

  /// Foot position in the body frame.
  Vec3 fk(int leg, const Vec3& q) const;
  /// d fk / d q, 3x3.
  Mat3 fk_jacobian(int leg, const Vec3& q) const;
  /// Foot (shank) orientation in the body frame.
  Mat3 foot_orientation(int leg, const Vec3& q) const;
  /// Relative angular velocity of the foot w.r.t. the body, body frame.
  Vec3 relative_angular_velocity(int leg, const Vec3& q, const Vec3& qdot) const;
  /// Joint angles reaching a body-frame foot target; nullopt out of reach.
  std::optional<Vec3> ik(int leg, const Vec3& foot_body) const;
};

struct FootTwistNoise {
  double sigma_omega = 0.05;
  double sigma_nu = 0.05;
};

/// Foot twists from one joint sample and the current body estimates.
/// A straight knee (within 1e-6 rad) inflates the stds by 100 instead of
/// throwing.
std::array<FootTwist, kNumLegs> foot_twist_from_joints(
    const JointSample& js, const Vec3& gyro, const Vec3& body_velocity,
    const Rot3& body_rotation, const LegGeometry& geom,
    const FootTwistNoise& noise = {});

/// Noise-free foot pose propagation: Psi * Exp(omega dt), s + Psi nu dt.
inline std::pair<Rot3, Vec3> foot_propagate(const Rot3& Psi, const Vec3& s,
                                            const FootTwist& tw, double dt) {
  return {Psi * Rot3::exp(tw.omega_xi * dt), s + Psi * (tw.nu_xi * dt) };
}

/// Relative foot rotation/translation compounded from twist samples, with
/// the first-order noise covariance over (dpsi, ds).
struct FootPreintegration {
  int leg = 0;
  Rot3 dPsi;
  Vec3 ds = Vec3::Zero();
  MatN<6, 6> cov = MatN<6, 6>::Zero();
  double t_start = 0.0;
  double t_end = 0.0;
  int count = 0;

  /// Integrate one twist held over dt.
  void integrate(const FootTwist& tw, double dt);
};

/// Preintegrate a single-leg, time-ordered twist list over
/// [twists.front().stamp, t_end].
FootPreintegration preintegrate_foot(const std::vector<FootTwist>& twists,
                                     double t_end);

/// Rotation and position residuals of a preintegrated foot measurement
/// against the window states: r_R = Log(dPsi^T Psi_i^T Psi_j),
/// r_p = Psi_i^T (s_j - s_i) - ds.
std::pair<Vec3, Vec3> foot_residuals(const Rot3& Psi_i, const Vec3& s_i,
                                     const Rot3& Psi_j, const Vec3& s_j,
                                     const FootPreintegration& pre);

/// LIKO ties the current foot position to the body, s = p + R r_b, and
/// measures it against the anchor-frame preintegration in world coordinates:
/// r = (p + R r_b - s_i) - Psi_i ds.
Vec3 liko_foot_residual(const NominalState& x, const Vec3& foot_pos_body,
                        const Rot3& Psi_i, const Vec3& s_i,
                        const FootPreintegration& pre);

/// Jacobian of the LIKO foot position residual w.r.t. the 27-dim error
/// state. Only the body rotation and position blocks are nonzero.
MatN<3, ErrorBlocks::kDim> foot_jacobian_esikf(const NominalState& x,
                                               const FootPreintegration& pre,
                                               const Vec3& foot_pos_body);

}  // namespace lvik
