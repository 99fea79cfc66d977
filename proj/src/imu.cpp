#include "lvik/imu.hpp"

#include <algorithm>

namespace lvik {

std::pair<Pose3, Vec3> PropagationBuffer::pose_at(double t) const {
  if (entries_.empty()) throw std::out_of_range("pose_at: empty buffer");
  if (t < entries_.front().stamp - 1e-9 || t > entries_.back().stamp + 1e-9)
    throw std::out_of_range("pose_at: stamp outside buffer span");
  t = std::clamp(t, entries_.front().stamp, entries_.back().stamp);

  const auto it = std::lower_bound(
      entries_.begin(), entries_.end(), t,
      [](const Entry& e, double s) { return e.stamp < s; });
  if (it == entries_.begin()) return {it->pose, it->velocity};
  if (it == entries_.end()) return {entries_.back().pose, entries_.back().velocity};
  const Entry& b = *it;
  const Entry& a = *(it - 1);
  if (b.stamp - a.stamp < 1e-12) return {b.pose, b.velocity};

  const double alpha = (t - a.stamp) / (b.stamp - a.stamp);
  Pose3 pose{slerp(a.pose.rotation, b.pose.rotation, alpha),
             (1.0 - alpha) * a.pose.translation + alpha * b.pose.translation};
  return {pose, (1.0 - alpha) * a.velocity + alpha * b.velocity};
}

void imu_propagate(NominalState& state, CovMatrix& cov, const ImuSample& s, double dt,
                   const ImuNoise& noise, PropagationBuffer* buffer) {
  using B = ErrorBlocks;
  if (!(dt > 0.0)) throw std::invalid_argument("imu_propagate: dt must be positive");
  if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-9)
    throw std::invalid_argument("imu_propagate: covariance not symmetric");

  const Vec3 omega = s.gyro - state.b_g;
  const Vec3 acc_b = s.accel - state.b_a;
  const Vec3 phi = omega * dt;
  const Mat3 R = state.R_w.matrix();
  const Mat3 dR = so3_exp(phi);
  const Mat3 R_next = R * dR;

  // The within-step rotation integral of a constant specific force is the
  // left Jacobian: int_0^dt R Exp(w tau) a dtau = R Jl(w dt) a dt.
  const Vec3 acc_w = R * (so3_right_jacobian(-phi) * acc_b) + kGravity;
  const Vec3 p_next = state.p_w + state.v_w * dt + 0.5 * acc_w * dt * dt;
  const Vec3 v_next = state.v_w + acc_w * dt;

  // Error-state transition, right-perturbation convention.
  CovMatrix F = CovMatrix::Identity();
  F.block<3, 3>(B::kTheta, B::kTheta) = dR.transpose();
  F.block<3, 3>(B::kTheta, B::kBg) = -so3_right_jacobian(phi) * dt;
  F.block<3, 3>(B::kV, B::kTheta) = -R * skew(acc_b) * dt;
  F.block<3, 3>(B::kV, B::kBa) = -R * dt;
  F.block<3, 3>(B::kP, B::kTheta) = -0.5 * R * skew(acc_b) * dt * dt;
  F.block<3, 3>(B::kP, B::kV) = Mat3::Identity() * dt;
  F.block<3, 3>(B::kP, B::kBa) = -0.5 * R * dt * dt;

  CovMatrix Q = CovMatrix::Zero();
  const Mat3 Jr = so3_right_jacobian(phi);
  Q.block<3, 3>(B::kTheta, B::kTheta) =
      Jr * Jr.transpose() * (noise.sigma_g * noise.sigma_g * dt);
  Q.block<3, 3>(B::kV, B::kV) = Mat3::Identity() * (noise.sigma_a * noise.sigma_a * dt);
  Q.block<3, 3>(B::kBa, B::kBa) =
      Mat3::Identity() * (noise.sigma_ba * noise.sigma_ba * dt);
  Q.block<3, 3>(B::kBg, B::kBg) =
      Mat3::Identity() * (noise.sigma_bg * noise.sigma_bg * dt);

  cov = F * cov * F.transpose() + Q;
  cov = 0.5 * (cov + cov.transpose()).eval();

  state.R_w = Rot3(R_next);
  state.p_w = p_next;
  state.v_w = v_next;
  state.stamp += dt;
  if (buffer) buffer->push(state.stamp, {state.R_w, state.p_w}, state.v_w);
}

void ImuPreintegration::integrate(const ImuSample& s, double dt, const ImuNoise& noise) {
  if (!(dt > 0.0)) return;
  const Vec3 omega = s.gyro - bias_g;
  const Vec3 acc = s.accel - bias_a;
  const Vec3 phi = omega * dt;
  const Mat3 dRk = dR.matrix();
  const Mat3 dR_step = so3_exp(phi);
  const Mat3 Jr = so3_right_jacobian(phi);

  // Noise/covariance propagation over [dtheta, dv, dp, dba, dbg].
  MatN<15, 15> A = MatN<15, 15>::Identity();
  A.block<3, 3>(0, 0) = dR_step.transpose();
  A.block<3, 3>(0, 12) = -Jr * dt;
  A.block<3, 3>(3, 0) = -dRk * skew(acc) * dt;
  A.block<3, 3>(3, 9) = -dRk * dt;
  A.block<3, 3>(6, 0) = -0.5 * dRk * skew(acc) * dt * dt;
  A.block<3, 3>(6, 3) = Mat3::Identity() * dt;
  A.block<3, 3>(6, 9) = -0.5 * dRk * dt * dt;

  MatN<15, 15> Q = MatN<15, 15>::Zero();
  Q.block<3, 3>(0, 0) = Jr * Jr.transpose() * (noise.sigma_g * noise.sigma_g * dt);
  Q.block<3, 3>(3, 3) = Mat3::Identity() * (noise.sigma_a * noise.sigma_a * dt);
  Q.block<3, 3>(6, 6) =
      Mat3::Identity() * (0.25 * noise.sigma_a * noise.sigma_a * dt * dt * dt);
  Q.block<3, 3>(9, 9) = Mat3::Identity() * (noise.sigma_ba * noise.sigma_ba * dt);
  Q.block<3, 3>(12, 12) = Mat3::Identity() * (noise.sigma_bg * noise.sigma_bg * dt);
  cov = A * cov * A.transpose() + Q;
  cov = 0.5 * (cov + cov.transpose()).eval();

  // Bias Jacobians of the mean, first order.
  dp_dba += dv_dba * dt - 0.5 * dRk * dt * dt;
  dp_dbg += dv_dbg * dt - 0.5 * dRk * skew(acc) * dR_dbg * dt * dt;
  dv_dba += -dRk * dt;
  dv_dbg += -dRk * skew(acc) * dR_dbg * dt;
  dR_dbg = dR_step.transpose() * dR_dbg - Jr * dt;

  // Mean.
  dp += dv * dt + 0.5 * dRk * acc * dt * dt;
  dv += dRk * acc * dt;
  dR.compose_in_place(Rot3(dR_step));
  duration += dt;
}

ImuPreintegration imu_preintegrate(const std::vector<ImuSample>& samples,
                                   const Vec3& bias_a, const Vec3& bias_g,
                                   const ImuNoise& noise, double t_end) {
  if (samples.empty()) throw std::invalid_argument("imu_preintegrate: empty sample list");
  ImuPreintegration pre;
  pre.bias_a = bias_a;
  pre.bias_g = bias_g;
  for (size_t i = 0; i + 1 < samples.size(); ++i) {
    const double dt = samples[i + 1].stamp - samples[i].stamp;
    if (dt <= 0.0) throw std::invalid_argument("imu_preintegrate: unordered stamps");
    pre.integrate(samples[i], dt, noise);
  }
  if (t_end > samples.back().stamp)
    pre.integrate(samples.back(), t_end - samples.back().stamp, noise);
  return pre;
}

}  // namespace lvik
