#include "lvik/eval.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lvik {

std::vector<std::pair<size_t, size_t>> associate(const Trajectory& est,
                                                 const Trajectory& gt,
                                                 double max_dt) {
  std::vector<std::pair<size_t, size_t>> pairs;
  size_t j = 0;
  for (size_t i = 0; i < est.size(); ++i) {
    while (j + 1 < gt.size() &&
           std::abs(gt[j + 1].stamp - est[i].stamp) <= std::abs(gt[j].stamp - est[i].stamp))
      ++j;
    if (j < gt.size() && std::abs(gt[j].stamp - est[i].stamp) <= max_dt)
      pairs.emplace_back(i, j);
  }
  return pairs;
}

Pose3 umeyama_align(const Trajectory& est, const Trajectory& gt, size_t n,
                    double max_dt) {
  auto pairs = associate(est, gt, max_dt);
  if (pairs.size() > n) pairs.resize(n);
  if (pairs.size() < 3)
    throw std::invalid_argument("umeyama_align: need at least 3 associated poses");

  Vec3 mu_e = Vec3::Zero(), mu_g = Vec3::Zero();
  for (const auto& [i, j] : pairs) {
    mu_e += est[i].pose.translation;
    mu_g += gt[j].pose.translation;
  }
  mu_e /= static_cast<double>(pairs.size());
  mu_g /= static_cast<double>(pairs.size());

  Mat3 sigma = Mat3::Zero();
  for (const auto& [i, j] : pairs) {
    sigma += (gt[j].pose.translation - mu_g) * (est[i].pose.translation - mu_e).transpose();
  }
  sigma /= static_cast<double>(pairs.size());

  Eigen::JacobiSVD<Mat3> svd(sigma, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 S = Mat3::Identity();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) S(2, 2) = -1.0;
  const Mat3 R = svd.matrixU() * S * svd.matrixV().transpose();
  const Vec3 t = mu_g - R * mu_e;
  return Pose3{Rot3(R), t};
}

Trajectory apply_transform(const Pose3& T, const Trajectory& traj) {
  Trajectory out = traj;
  for (auto& sp : out) sp.pose = T * sp.pose;
  return out;
}

double ate_rmse(const Trajectory& est, const Trajectory& gt, double max_dt) {
  const auto pairs = associate(est, gt, max_dt);
  if (pairs.empty()) throw std::invalid_argument("ate: no associated poses");
  double acc = 0.0;
  for (const auto& [i, j] : pairs)
    acc += (est[i].pose.translation - gt[j].pose.translation).squaredNorm();
  return std::sqrt(acc / static_cast<double>(pairs.size()));
}

double rpe_rmse(const Trajectory& est, const Trajectory& gt, int delta, double max_dt) {
  const auto pairs = associate(est, gt, max_dt);
  if (static_cast<int>(pairs.size()) < delta + 1)
    throw std::invalid_argument("rpe: not enough associated poses for the stride");
  double acc = 0.0;
  size_t count = 0;
  for (size_t k = 0; k + delta < pairs.size(); ++k) {
    const auto& [i0, j0] = pairs[k];
    const auto& [i1, j1] = pairs[k + delta];
    const Pose3 rel_est = est[i0].pose.inverse() * est[i1].pose;
    const Pose3 rel_gt = gt[j0].pose.inverse() * gt[j1].pose;
    acc += (rel_est.translation - rel_gt.translation).squaredNorm();
    ++count;
  }
  return std::sqrt(acc / static_cast<double>(count));
}

EvalReport evaluate_trajectory(const Trajectory& est, const Trajectory& gt,
                               size_t align_poses, int rpe_delta, double max_dt) {
  EvalReport rep;
  rep.alignment = umeyama_align(est, gt, align_poses, max_dt);
  const Trajectory aligned = apply_transform(rep.alignment, est);
  rep.ate = ate_rmse(aligned, gt, max_dt);
  rep.rpe = rpe_rmse(aligned, gt, rpe_delta, max_dt);
  rep.pairs = associate(est, gt, max_dt).size();
  return rep;
}

}  // namespace lvik
