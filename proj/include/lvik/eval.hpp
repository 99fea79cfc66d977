#pragma once

#include <optional>
#include <vector>

#include "lvik/so3.hpp"

namespace lvik {

struct StampedPose {
  double stamp = 0.0;
  Pose3 pose;
};

using Trajectory = std::vector<StampedPose>;

/// Nearest-stamp association within the window; indices into (est, gt).
std::vector<std::pair<size_t, size_t>> associate(const Trajectory& est,
                                                 const Trajectory& gt,
                                                 double max_dt = 0.01);

/// Closed-form SE(3) least-squares alignment (rotation + translation, unit
/// scale) over the first n associated pairs, applied as est' = T * est.
/// Throws insufficient-data (invalid_argument) below 3 pairs.
Pose3 umeyama_align(const Trajectory& est, const Trajectory& gt, size_t n = 500,
                    double max_dt = 0.01);

Trajectory apply_transform(const Pose3& T, const Trajectory& traj);

/// RMSE of translational differences over associated pairs.
double ate_rmse(const Trajectory& est, const Trajectory& gt, double max_dt = 0.01);

/// RMSE of relative-pose translational error at the given stride.
double rpe_rmse(const Trajectory& est, const Trajectory& gt, int delta = 1,
                double max_dt = 0.01);

struct EvalReport {
  double ate = 0.0;
  double rpe = 0.0;
  size_t pairs = 0;
  Pose3 alignment;
};

EvalReport evaluate_trajectory(const Trajectory& est, const Trajectory& gt,
                               size_t align_poses = 500, int rpe_delta = 1,
                               double max_dt = 0.01);

}  // namespace lvik
