#include "lvik/viko_vision.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace lvik {

ConsistencyConstants ConsistencyConstants::from(double c1, double c2) {
  if (!(c1 > 0.0) || !(c2 > 0.0) || !(c2 < 1.0))
    throw std::invalid_argument("ConsistencyConstants: need c1 > 0, c2 in (0,1)");
  ConsistencyConstants k;
  k.c1 = c1;
  k.c2 = c2;
  k.a3 = -std::log(c2);
  k.a1 = -std::log(c1 + c2) - k.a3;
  const double at_one = -std::log(c1 * std::exp(-0.5) + c2) - k.a3;
  k.a2 = -2.0 * std::log(at_one / k.a1);
  return k;
}

double ConsistencyConstants::residual_ddist(double d) const {
  const double r = residual(d);
  if (r < 1e-9) {
    // r ~ sqrt(-a1 a2 d / 2) near zero: finite slope in sqrt(d), not in d.
    return 0.0;
  }
  return -0.5 * a1 * a2 * std::exp(-0.5 * a2 * d) / (2.0 * r);
}

ReprojectionResidual reprojection_residual(
    const NominalState& host, const Vec2& host_uv, double inv_depth,
    const NominalState& observer, const std::optional<Vec2>& obs_left,
    const std::optional<Vec2>& obs_right, bool observer_is_host) {
  if (!(inv_depth > 0.0))
    throw std::invalid_argument("reprojection_residual: inverse depth must be > 0");

  const Vec3 f_host(host_uv.x(), host_uv.y(), 1.0);
  const Vec3 cam_point = f_host / inv_depth;
  const Pose3 host_cam = camera_pose(host.R_w, host.p_w, host.ext_cl);
  const Vec3 world = host_cam * cam_point;

  ReprojectionResidual out;
  auto project = [&](const Pose3& ext, const Vec2& obs, Vec2& res, bool& valid) {
    const Pose3 cam = camera_pose(observer.R_w, observer.p_w, ext);
    const Vec3 pc = cam.inverse() * world;
    if (pc.z() <= 1e-3) {
      valid = false;
      return;
    }
    res = Vec2(pc.x() / pc.z(), pc.y() / pc.z()) - obs;
    valid = true;
  };

  if (obs_left && !observer_is_host)
    project(observer.ext_cl, *obs_left, out.left, out.left_valid);
  if (obs_right) project(observer.ext_cr, *obs_right, out.right, out.right_valid);
  return out;
}

long grid_cell_label(const Vec2& uv, double cell) {
  const auto gx = static_cast<int32_t>(std::floor(uv.x() / cell));
  const auto gy = static_cast<int32_t>(std::floor(uv.y() / cell));
  return (static_cast<long>(gx) << 32) ^ static_cast<long>(static_cast<uint32_t>(gy));
}

std::vector<long> grid_superpixel_labels(const std::vector<Vec2>& uv, double cell) {
  std::vector<long> labels(uv.size());
  for (size_t i = 0; i < uv.size(); ++i) labels[i] = grid_cell_label(uv[i], cell);
  return labels;
}

std::vector<NdtCluster> build_clusters(const std::vector<Vec3>& points,
                                       const std::vector<long>& labels) {
  if (points.size() != labels.size())
    throw std::invalid_argument("build_clusters: label/point size mismatch");

  std::map<long, std::vector<const Vec3*>> groups;
  for (size_t i = 0; i < points.size(); ++i) groups[labels[i]].push_back(&points[i]);

  std::vector<NdtCluster> clusters;
  for (const auto& [id, pts] : groups) {
    if (pts.size() < 5) continue;
    NdtCluster c;
    c.cluster_id = id;
    c.count = static_cast<int>(pts.size());
    Vec3 mean = Vec3::Zero();
    for (const Vec3* p : pts) mean += *p;
    mean /= static_cast<double>(pts.size());
    Mat3 cov = Mat3::Zero();
    for (const Vec3* p : pts) {
      const Vec3 d = *p - mean;
      cov += d * d.transpose();
    }
    cov /= static_cast<double>(pts.size() - 1);

    // Clamp the spectrum so thin (planar) clusters stay invertible.
    Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
    Vec3 ev = eig.eigenvalues();
    const double floor_ev = std::max(1e-4 * ev[2], 1e-12);
    for (int i = 0; i < 3; ++i) ev[i] = std::max(ev[i], floor_ev);
    const Mat3 V = eig.eigenvectors();
    c.cov = V * ev.asDiagonal() * V.transpose();
    c.info = V * ev.cwiseInverse().asDiagonal() * V.transpose();
    c.mean = mean;
    clusters.push_back(c);
  }
  return clusters;
}

double consistency_mahalanobis(const Vec3& f_normalized, double inv_depth,
                               const NdtCluster& cluster) {
  if (!(inv_depth > 0.0))
    throw std::invalid_argument("consistency_mahalanobis: inverse depth must be > 0");
  const Vec3 z = f_normalized / inv_depth - cluster.mean;
  return z.dot(cluster.info * z);
}

double depth_consistency_residual(const Vec3& f_normalized, double inv_depth,
                                  const NdtCluster& cluster,
                                  const ConsistencyConstants& k, bool paper_form) {
  const double d = consistency_mahalanobis(f_normalized, inv_depth, cluster);
  return paper_form ? k.score(d) : k.residual(d);
}

}  // namespace lvik
