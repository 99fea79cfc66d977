#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "lvik/state.hpp"

namespace lvik {

/// Normalized-plane stereo observation (intrinsics already applied).
struct FeatureObservation {
  double stamp = 0.0;
  long feature_id = -1;
  Vec2 left = Vec2::Zero();
  std::optional<Vec2> right;
  std::optional<long> cluster_id;
};

/// All feature observations of one camera frame.
struct FeatureFrame {
  double stamp = 0.0;
  std::vector<FeatureObservation> observations;
};

/// Gaussian summary of LiDAR points grouped under one image cluster,
/// expressed in the left camera frame of the host keyframe.
struct NdtCluster {
  long cluster_id = -1;
  Vec3 mean = Vec3::Zero();
  Mat3 cov = Mat3::Identity();
  Mat3 info = Mat3::Identity();
  int count = 0;
};

/// Bounded-kernel constants of the depth-consistency score. a1 < 0 for all
/// admissible (c1, c2); a2 makes the exponential match the shifted negative
/// log-likelihood exactly at unit Mahalanobis distance.
struct ConsistencyConstants {
  double c1 = 0.95;
  double c2 = 0.05;
  double a1 = 0.0, a2 = 0.0, a3 = 0.0;

  static ConsistencyConstants from(double c1, double c2);

  /// Bounded score -a1 exp(-a2 d / 2) at squared Mahalanobis distance d.
  double score(double d) const { return -a1 * std::exp(-0.5 * a2 * d); }
  /// Least-squares embedding: zero at d = 0, monotone, bounded by
  /// sqrt(-a1).
  double residual(double d) const {
    return std::sqrt(std::max(0.0, a1 * (std::exp(-0.5 * a2 * d) - 1.0)));
  }
  /// d/dd of residual(d); guarded near d = 0 where the sqrt has a cusp.
  double residual_ddist(double d) const;
};

/// Pinhole camera pose in the world: body pose composed with the extrinsic.
inline Pose3 camera_pose(const Rot3& R_w, const Vec3& p_w, const Pose3& ext) {
  return Pose3{R_w, p_w} * ext;
}

struct ReprojectionResidual {
  Vec2 left = Vec2::Zero();
  Vec2 right = Vec2::Zero();
  bool left_valid = false;
  bool right_valid = false;
};

/// Stereo reprojection of a host-frame inverse-depth landmark into an
/// observing frame. Points at or behind a camera (depth <= 1e-3 m) are
/// flagged invalid rather than evaluated. When host and observer coincide
/// only the right view constrains anything; the left residual is skipped.
ReprojectionResidual reprojection_residual(
    const NominalState& host, const Vec2& host_uv, double inv_depth,
    const NominalState& observer, const std::optional<Vec2>& obs_left,
    const std::optional<Vec2>& obs_right, bool observer_is_host);

/// Deterministic grid stand-in for image superpixels: the label is the cell
/// of (u, v) at the given size in normalized units.
std::vector<long> grid_superpixel_labels(const std::vector<Vec2>& uv,
                                         double cell = 0.1);
long grid_cell_label(const Vec2& uv, double cell = 0.1);

/// Per-label sample mean and covariance of camera-frame points; clusters
/// with fewer than 5 points are dropped, covariances regularized so the
/// smallest eigenvalue is at least 1e-4 times the largest.
std::vector<NdtCluster> build_clusters(const std::vector<Vec3>& points,
                                       const std::vector<long>& labels);

/// Squared Mahalanobis distance of the back-projected point to the cluster.
double consistency_mahalanobis(const Vec3& f_normalized, double inv_depth,
                               const NdtCluster& cluster);

/// Depth-consistency residual in the shifted least-squares form (see
/// ConsistencyConstants::residual). `paper_form` returns the raw bounded
/// score instead.
double depth_consistency_residual(const Vec3& f_normalized, double inv_depth,
                                  const NdtCluster& cluster,
                                  const ConsistencyConstants& k,
                                  bool paper_form = false);

}  // namespace lvik
