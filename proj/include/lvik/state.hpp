#pragma once

#include <array>
#include <map>
#include <stdexcept>
#include <vector>

#include "lvik/so3.hpp"

namespace lvik {

/// Block offsets of the 27-dim error state. Every Jacobian in the filter
/// path addresses its columns through this table.
struct ErrorBlocks {
  static constexpr int kTheta = 0;    // body rotation
  static constexpr int kP = 3;        // body position
  static constexpr int kThetaCl = 6;  // left camera extrinsic rotation
  static constexpr int kPCl = 9;      // left camera extrinsic translation
  static constexpr int kThetaCr = 12; // right camera extrinsic rotation
  static constexpr int kPCr = 15;     // right camera extrinsic translation
  static constexpr int kV = 18;       // world velocity
  static constexpr int kBa = 21;      // accelerometer bias
  static constexpr int kBg = 24;      // gyroscope bias
  static constexpr int kDim = 27;
};

using ErrorState = VecN<ErrorBlocks::kDim>;
using CovMatrix = MatN<ErrorBlocks::kDim, ErrorBlocks::kDim>;

/// Full robot state: body pose, stereo extrinsics, velocity, IMU biases.
struct NominalState {
  Vec3 p_w = Vec3::Zero();
  Rot3 R_w;
  Pose3 ext_cl;  // left camera w.r.t. body
  Pose3 ext_cr;  // right camera w.r.t. body
  Vec3 v_w = Vec3::Zero();
  Vec3 b_a = Vec3::Zero();
  Vec3 b_g = Vec3::Zero();
  double stamp = 0.0;
};

/// Body state extended with per-leg foot pose, one window entry each.
struct VikoState {
  static constexpr int kNumLegs = 4;
  NominalState base;
  std::array<Rot3, kNumLegs> foot_R;
  std::array<Vec3, kNumLegs> foot_p = {Vec3::Zero(), Vec3::Zero(), Vec3::Zero(),
                                       Vec3::Zero()};
};

/// Right-perturbation retraction: rotations via R * Exp(dtheta), vector
/// blocks additive. The stamp is untouched.
inline NominalState state_boxplus(const NominalState& x, const ErrorState& dx) {
  if (!dx.allFinite()) throw std::invalid_argument("state_boxplus: non-finite increment");
  using B = ErrorBlocks;
  NominalState out = x;
  out.R_w = x.R_w * Rot3::exp(dx.segment<3>(B::kTheta));
  out.p_w += dx.segment<3>(B::kP);
  out.ext_cl.rotation = x.ext_cl.rotation * Rot3::exp(dx.segment<3>(B::kThetaCl));
  out.ext_cl.translation += dx.segment<3>(B::kPCl);
  out.ext_cr.rotation = x.ext_cr.rotation * Rot3::exp(dx.segment<3>(B::kThetaCr));
  out.ext_cr.translation += dx.segment<3>(B::kPCr);
  out.v_w += dx.segment<3>(B::kV);
  out.b_a += dx.segment<3>(B::kBa);
  out.b_g += dx.segment<3>(B::kBg);
  return out;
}

/// Inverse of state_boxplus: rotation blocks via Log(R0^T R1), vectors by
/// difference.
inline ErrorState state_boxminus(const NominalState& x1, const NominalState& x0) {
  using B = ErrorBlocks;
  ErrorState dx;
  dx.segment<3>(B::kTheta) = (x0.R_w.inverse() * x1.R_w).log();
  dx.segment<3>(B::kP) = x1.p_w - x0.p_w;
  dx.segment<3>(B::kThetaCl) = (x0.ext_cl.rotation.inverse() * x1.ext_cl.rotation).log();
  dx.segment<3>(B::kPCl) = x1.ext_cl.translation - x0.ext_cl.translation;
  dx.segment<3>(B::kThetaCr) = (x0.ext_cr.rotation.inverse() * x1.ext_cr.rotation).log();
  dx.segment<3>(B::kPCr) = x1.ext_cr.translation - x0.ext_cr.translation;
  dx.segment<3>(B::kV) = x1.v_w - x0.v_w;
  dx.segment<3>(B::kBa) = x1.b_a - x0.b_a;
  dx.segment<3>(B::kBg) = x1.b_g - x0.b_g;
  return dx;
}

/// Jacobian of d -> (x boxplus d) boxminus x0, evaluated at d = 0.
/// Rotation blocks are inverse right Jacobians of the current differences,
/// vector blocks identity.
inline CovMatrix boxminus_jacobian(const NominalState& x, const NominalState& x0) {
  using B = ErrorBlocks;
  CovMatrix J = CovMatrix::Identity();
  const ErrorState e = state_boxminus(x, x0);
  J.block<3, 3>(B::kTheta, B::kTheta) = so3_right_jacobian_inv(e.segment<3>(B::kTheta));
  J.block<3, 3>(B::kThetaCl, B::kThetaCl) =
      so3_right_jacobian_inv(e.segment<3>(B::kThetaCl));
  J.block<3, 3>(B::kThetaCr, B::kThetaCr) =
      so3_right_jacobian_inv(e.segment<3>(B::kThetaCr));
  return J;
}

/// Feature bookkeeping entry of the sliding window.
struct WindowFeature {
  int host_frame = 0;       // index into SlidingWindow::frames
  double inv_depth = 0.0;   // 1/m, in the host left camera
};

struct SlidingWindow {
  std::vector<VikoState> frames;
  std::map<long, WindowFeature> features;  // feature id -> entry
  int capacity = 10;

  void check() const {
    if (frames.size() > static_cast<size_t>(capacity) + 1)
      throw std::logic_error("sliding window over capacity");
    for (const auto& [id, f] : features) {
      if (!(f.inv_depth > 0.0)) throw std::logic_error("non-positive inverse depth");
      if (f.host_frame < 0 || f.host_frame >= static_cast<int>(frames.size()))
        throw std::logic_error("feature host outside window");
    }
  }
};

}  // namespace lvik
