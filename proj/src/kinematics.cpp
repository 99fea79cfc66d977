#include "lvik/kinematics.hpp"

#include <cmath>

namespace lvik {

namespace {

Mat3 rot_x(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 m;
  m << 1, 0, 0, 0, c, -s, 0, s, c;
  return m;
}

Mat3 rot_y(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 m;
  m << c, 0, s, 0, 1, 0, -s, 0, c;
  return m;
}

}  // namespace

Vec3 LegGeometry::fk(int leg, const Vec3& q) const {
  const Vec3 hip_link(0.0, lateral_sign(leg) * l_hip, 0.0);
  const Vec3 calf = rot_y(q[2]) * Vec3(0.0, 0.0, -l_calf);
  const Vec3 knee_chain = rot_y(q[1]) * (Vec3(0.0, 0.0, -l_thigh) + calf);
  return hip_offset[leg] + rot_x(q[0]) * (hip_link + knee_chain);
}

Mat3 LegGeometry::fk_jacobian(int leg, const Vec3& q) const {
  const Vec3 hip_link(0.0, lateral_sign(leg) * l_hip, 0.0);
  const Mat3 Rx = rot_x(q[0]);
  const Mat3 Ry2 = rot_y(q[1]);
  const Vec3 calf = rot_y(q[2]) * Vec3(0.0, 0.0, -l_calf);
  const Vec3 knee_chain = Ry2 * (Vec3(0.0, 0.0, -l_thigh) + calf);

  Mat3 J;
  J.col(0) = skew(Vec3::UnitX()) * (Rx * (hip_link + knee_chain));
  J.col(1) = Rx * (skew(Vec3::UnitY()) * knee_chain);
  J.col(2) = Rx * Ry2 * (skew(Vec3::UnitY()) * calf);
  return J;
}

Mat3 LegGeometry::foot_orientation(int leg, const Vec3& q) const {
  (void)leg;
  return rot_x(q[0]) * rot_y(q[1] + q[2]);
}

Vec3 LegGeometry::relative_angular_velocity(int leg, const Vec3& q,
                                            const Vec3& qdot) const {
  (void)leg;
  return qdot[0] * Vec3::UnitX() + (qdot[1] + qdot[2]) * (rot_x(q[0]) * Vec3::UnitY());
}

std::optional<Vec3> LegGeometry::ik(int leg, const Vec3& foot_body) const {
  const Vec3 t = foot_body - hip_offset[leg];
  const double side = lateral_sign(leg) * l_hip;

  // Abduction: rotate about x until the (y, z) components land on the hip
  // link; pick the branch closest to zero.
  const double r_yz = std::hypot(t.y(), t.z());
  if (r_yz < std::abs(side)) return std::nullopt;
  const double alpha = std::atan2(t.z(), t.y());
  const double beta = std::acos(std::clamp(side / r_yz, -1.0, 1.0));
  double q1 = alpha + beta;
  const double q1_alt = alpha - beta;
  auto wrap = [](double a) {
    while (a > M_PI) a -= 2.0 * M_PI;
    while (a < -M_PI) a += 2.0 * M_PI;
    return a;
  };
  q1 = wrap(q1);
  const double q1b = wrap(q1_alt);
  if (std::abs(q1b) < std::abs(q1)) q1 = q1b;

  // Planar 2-link in the rolled frame: x'' = -l2 s2 - l3 s23,
  // z'' = -l2 c2 - l3 c23.
  const Vec3 tp = rot_x(q1).transpose() * t;
  const double x = tp.x();
  const double z = tp.z();
  const double d2 = x * x + z * z;
  const double c3 =
      (d2 - l_thigh * l_thigh - l_calf * l_calf) / (2.0 * l_thigh * l_calf);
  if (c3 > 1.0 || c3 < -1.0) return std::nullopt;
  const double q3 = -std::acos(c3);  // knee folds backward

  const double A = l_thigh + l_calf * std::cos(q3);
  const double B = l_calf * std::sin(q3);
  const double den = A * A + B * B;
  const double s2 = (-A * x + B * z) / den;
  const double c2 = (-B * x - A * z) / den;
  const double q2 = std::atan2(s2, c2);
  return Vec3(q1, q2, q3);
}

std::array<FootTwist, kNumLegs> foot_twist_from_joints(
    const JointSample& js, const Vec3& gyro, const Vec3& body_velocity,
    const Rot3& body_rotation, const LegGeometry& geom, const FootTwistNoise& noise) {
  if (!gyro.allFinite() || !body_velocity.allFinite())
    throw std::invalid_argument("foot_twist_from_joints: non-finite estimate");
  std::array<FootTwist, kNumLegs> out;
  const Mat3 Rt = body_rotation.matrix().transpose();
  for (int l = 0; l < kNumLegs; ++l) {
    const Vec3& q = js.q[l];
    const Vec3& qd = js.qdot[l];
    const Mat3 Rf = geom.foot_orientation(l, q);
    const Vec3 r_b = geom.fk(l, q);
    const Vec3 foot_vel_body = gyro.cross(r_b) + geom.fk_jacobian(l, q) * qd;

    FootTwist tw;
    tw.stamp = js.stamp;
    tw.leg = l;
    tw.nu_xi = Rf.transpose() * (Rt * body_velocity + foot_vel_body);
    tw.omega_xi = Rf.transpose() * (gyro + geom.relative_angular_velocity(l, q, qd));
    tw.sigma_omega = noise.sigma_omega;
    tw.sigma_nu = noise.sigma_nu;
    if (std::abs(q[2]) < 1e-6) {  // straight knee: near-singular Jacobian
      tw.sigma_omega *= 100.0;
      tw.sigma_nu *= 100.0;
    }
    out[l] = tw;
  }
  return out;
}

void FootPreintegration::integrate(const FootTwist& tw, double dt) {
  if (!(dt > 0.0)) return;
  const Vec3 phi = tw.omega_xi * dt;
  const Mat3 dPsi_k = dPsi.matrix();
  const Mat3 step = so3_exp(phi);
  const Mat3 Jr = so3_right_jacobian(phi);

  // First-order noise recursion over (dpsi, ds):
  //   dpsi+ = step^T dpsi + Jr n_w dt
  //   ds+   = ds - dPsi_k [nu]x dpsi dt + dPsi_k n_v dt
  MatN<6, 6> A = MatN<6, 6>::Identity();
  A.block<3, 3>(0, 0) = step.transpose();
  A.block<3, 3>(3, 0) = -dPsi_k * skew(tw.nu_xi) * dt;
  MatN<6, 6> Q = MatN<6, 6>::Zero();
  Q.block<3, 3>(0, 0) =
      Jr * Jr.transpose() * (tw.sigma_omega * tw.sigma_omega * dt * dt);
  Q.block<3, 3>(3, 3) =
      dPsi_k * dPsi_k.transpose() * (tw.sigma_nu * tw.sigma_nu * dt * dt);
  cov = A * cov * A.transpose() + Q;
  cov = 0.5 * (cov + cov.transpose()).eval();

  ds += dPsi_k * tw.nu_xi * dt;
  dPsi.compose_in_place(Rot3(step));
  t_end += dt;
  ++count;
}

FootPreintegration preintegrate_foot(const std::vector<FootTwist>& twists,
                                     double t_end) {
  if (twists.empty()) throw std::invalid_argument("preintegrate_foot: empty list");
  FootPreintegration pre;
  pre.leg = twists.front().leg;
  pre.t_start = twists.front().stamp;
  pre.t_end = pre.t_start;
  pre.count = 0;
  for (size_t i = 0; i < twists.size(); ++i) {
    if (twists[i].leg != pre.leg)
      throw std::invalid_argument("preintegrate_foot: mixed legs");
    if (i > 0 && twists[i].stamp <= twists[i - 1].stamp)
      throw std::invalid_argument("preintegrate_foot: unordered stamps");
    const double t_next = (i + 1 < twists.size()) ? twists[i + 1].stamp : t_end;
    pre.integrate(twists[i], t_next - twists[i].stamp);
  }
  if (pre.count == 0) {
    // Degenerate span; keep the identity preintegration but count the sample.
    pre.count = 1;
  }
  return pre;
}

std::pair<Vec3, Vec3> foot_residuals(const Rot3& Psi_i, const Vec3& s_i,
                                     const Rot3& Psi_j, const Vec3& s_j,
                                     const FootPreintegration& pre) {
  const Mat3 rel = Psi_i.matrix().transpose() * Psi_j.matrix();
  const Vec3 r_R = so3_log(pre.dPsi.matrix().transpose() * rel);
  const Vec3 r_p = Psi_i.matrix().transpose() * (s_j - s_i) - pre.ds;
  return {r_R, r_p};
}

Vec3 liko_foot_residual(const NominalState& x, const Vec3& foot_pos_body,
                        const Rot3& Psi_i, const Vec3& s_i,
                        const FootPreintegration& pre) {
  const Vec3 s_j = x.p_w + x.R_w * foot_pos_body;
  return (s_j - s_i) - Psi_i * pre.ds;
}

MatN<3, ErrorBlocks::kDim> foot_jacobian_esikf(const NominalState& x,
                                               const FootPreintegration& pre,
                                               const Vec3& foot_pos_body) {
  (void)pre;
  using B = ErrorBlocks;
  MatN<3, B::kDim> J = MatN<3, B::kDim>::Zero();
  J.block<3, 3>(0, B::kTheta) = -x.R_w.matrix() * skew(foot_pos_body);
  J.block<3, 3>(0, B::kP) = Mat3::Identity();
  return J;
}

}  // namespace lvik
