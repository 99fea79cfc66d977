#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <stdexcept>

namespace lvik {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;
template <int N>
using VecN = Eigen::Matrix<double, N, 1>;
template <int R, int C>
using MatN = Eigen::Matrix<double, R, C>;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

/// Rodrigues exponential. Second-order Taylor branch below 1e-8 rad.
inline Mat3 so3_exp(const Vec3& phi) {
  if (!phi.allFinite()) throw std::invalid_argument("so3_exp: non-finite input");
  const double theta = phi.norm();
  const Mat3 S = skew(phi);
  if (theta < 1e-8) {
    return Mat3::Identity() + S + 0.5 * S * S;
  }
  const double s = std::sin(theta) / theta;
  const double c = (1.0 - std::cos(theta)) / (theta * theta);
  return Mat3::Identity() + s * S + c * S * S;
}

/// Principal logarithm, ||result|| <= pi.
///
/// Angles within 1e-4 of pi take the symmetric-part branch; the axis sign
/// there is fixed so that the component with the largest magnitude is
/// positive (ties broken toward x, then y, then z).
inline Vec3 so3_log(const Mat3& R) {
  const double tr = R.trace();
  const double cos_theta = std::clamp(0.5 * (tr - 1.0), -1.0, 1.0);
  const Vec3 vee(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
  // atan2 on (|vee|/2, (tr-1)/2) is well conditioned where acos is not.
  const double sin_theta = 0.5 * vee.norm();
  const double theta = std::atan2(sin_theta, cos_theta);

  if (theta < 1e-8) {
    // Log ~ 0.5 * (1 + theta^2/6) * vee(R - R^T)
    return 0.5 * (1.0 + theta * theta / 6.0) * vee;
  }
  if (theta < M_PI - 1e-4) {
    return (0.5 * theta / sin_theta) * vee;
  }

  // Near pi the antisymmetric part degenerates; recover the axis from the
  // diagonal of the symmetric part and the signs from the off-diagonals.
  const double one_minus_c = 1.0 - cos_theta;
  Vec3 axis;
  for (int i = 0; i < 3; ++i) {
    axis[i] = std::sqrt(std::max(0.0, (R(i, i) - cos_theta) / one_minus_c));
  }
  int k = 0;
  if (axis[1] > axis[k]) k = 1;
  if (axis[2] > axis[k]) k = 2;
  // Component signs relative to axis[k] > 0, from R_ka + R_ak = 2 n_k n_a (1-c).
  const int a = (k + 1) % 3, b = (k + 2) % 3;
  if (R(k, a) + R(a, k) < 0.0) axis[a] = -axis[a];
  if (R(k, b) + R(b, k) < 0.0) axis[b] = -axis[b];
  // Strictly below pi the antisymmetric part still fixes the overall sign;
  // at pi both signs are valid and the largest component stays positive.
  if (vee[k] < -1e-12) axis = -axis;
  return theta * axis.normalized();
}

/// Right Jacobian of SO(3): Exp(phi + d) ~ Exp(phi) Exp(Jr(phi) d).
inline Mat3 so3_right_jacobian(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 S = skew(phi);
  double c1, c2;
  if (theta < 1e-6) {
    const double t2 = theta * theta;
    c1 = 0.5 - t2 / 24.0;
    c2 = 1.0 / 6.0 - t2 / 120.0;
  } else {
    const double t2 = theta * theta;
    c1 = (1.0 - std::cos(theta)) / t2;
    c2 = (theta - std::sin(theta)) / (t2 * theta);
  }
  return Mat3::Identity() - c1 * S + c2 * S * S;
}

/// Inverse of the right Jacobian. Valid for ||phi|| < pi.
inline Mat3 so3_right_jacobian_inv(const Vec3& phi) {
  const double theta = phi.norm();
  const Mat3 S = skew(phi);
  double c2;
  if (theta < 1e-6) {
    c2 = 1.0 / 12.0 + theta * theta / 720.0;
  } else {
    const double st = std::sin(theta);
    c2 = 1.0 / (theta * theta) - (1.0 + std::cos(theta)) / (2.0 * theta * st);
  }
  return Mat3::Identity() + 0.5 * S + c2 * S * S;
}

inline Mat3 so3_left_jacobian_inv(const Vec3& phi) {
  return so3_right_jacobian_inv(-phi);
}

/// Orthonormal right-handed rotation. In-place compositions renormalize
/// every 256 steps to bound round-off drift.
class Rot3 {
 public:
  Rot3() : mat_(Mat3::Identity()) {}
  explicit Rot3(const Mat3& m) : mat_(m) {}

  static Rot3 identity() { return Rot3(); }
  static Rot3 exp(const Vec3& phi) { return Rot3(so3_exp(phi)); }
  static Rot3 from_quaternion(double qw, double qx, double qy, double qz) {
    return Rot3(Eigen::Quaterniond(qw, qx, qy, qz).normalized().toRotationMatrix());
  }

  const Mat3& matrix() const { return mat_; }
  Vec3 log() const { return so3_log(mat_); }
  Rot3 inverse() const { return Rot3(mat_.transpose()); }
  Vec3 operator*(const Vec3& v) const { return mat_ * v; }
  Rot3 operator*(const Rot3& o) const { return Rot3(mat_ * o.mat_); }

  Rot3& compose_in_place(const Rot3& o) {
    mat_ *= o.mat_;
    if (++compositions_ >= kRenormEvery) renormalize();
    return *this;
  }

  void renormalize() {
    Eigen::Quaterniond q(mat_);
    q.normalize();
    mat_ = q.toRotationMatrix();
    compositions_ = 0;
  }

  Eigen::Quaterniond quaternion() const {
    Eigen::Quaterniond q(mat_);
    if (q.w() < 0.0) q.coeffs() = -q.coeffs();
    return q;
  }

  bool is_orthonormal(double tol = 1e-9) const {
    return (mat_ * mat_.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() < tol &&
           mat_.determinant() > 0.0;
  }

  static constexpr int kRenormEvery = 256;

 private:
  Mat3 mat_;
  int compositions_ = 0;
};

struct Pose3 {
  Rot3 rotation;
  Vec3 translation = Vec3::Zero();

  Pose3() = default;
  Pose3(const Rot3& r, const Vec3& t) : rotation(r), translation(t) {}

  Vec3 operator*(const Vec3& v) const { return rotation * v + translation; }
  Pose3 operator*(const Pose3& o) const {
    return {rotation * o.rotation, rotation * o.translation + translation};
  }
  Pose3 inverse() const {
    Rot3 rinv = rotation.inverse();
    return {rinv, -(rinv * translation)};
  }
};

// Geodesic interpolation between two rotations, alpha in [0, 1].
inline Rot3 slerp(const Rot3& a, const Rot3& b, double alpha) {
  return a * Rot3::exp(alpha * (a.inverse() * b).log());
}

}  // namespace lvik
