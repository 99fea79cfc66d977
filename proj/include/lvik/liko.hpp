#pragma once

#include <optional>
#include <vector>

#include "lvik/imu.hpp"
#include "lvik/kinematics.hpp"
#include "lvik/voxel_map.hpp"

namespace lvik {

struct LidarPoint {
  double t_offset = 0.0;  // seconds since scan start
  Vec3 xyz = Vec3::Zero();  // sensor frame
};

/// One sweep; `stamp` is the scan reference time t_{k+1} (sweep end), so a
/// point's measurement time is stamp - period + t_offset.
///
/// `point_labels` is an optional side channel (surface ids from the
/// simulator, aligned with `points`); datasets on disk do not carry it.
struct LidarScan {
  double stamp = 0.0;
  double period = 0.1;
  std::vector<LidarPoint> points;
  std::vector<int32_t> point_labels;
};

struct LidarExtrinsics {
  Rot3 R_lb;              // sensor-to-body rotation
  Vec3 p_lb = Vec3::Zero();
};

struct EsikfConfig {
  int max_iterations = 5;
  double convergence_eps = 1e-4;   // on ||delta x||
  double sigma_point = 0.05;       // point-to-plane noise, m
  double outlier_gate = 0.5;       // |residual| above this is rejected, m
  // Association acceptance in sigma units of (point noise + plane rms);
  // keeps corner points off neighboring surfaces. The outlier gate stays
  // the hard cap.
  double assoc_gate_sigma = 3.0;
  int min_matches = 10;
  int max_points = 0;              // 0 = use every point for residuals
  int workers = 1;
  bool use_foot = true;
};

/// Motion compensation anchored at the buffer pose nearest the scan stamp:
/// the body-frame point and translation offset are frozen from the buffer,
/// only the re-anchoring pose varies during iteration.
struct DeskewContext {
  Mat3 R_anchor_t = Mat3::Identity();
  Vec3 p_anchor = Vec3::Zero();
  double t_base = 0.0;   // scan start
  double t_min = 0.0, t_max = 0.0;  // buffer span

  DeskewContext(const LidarScan& scan, const PropagationBuffer& buffer);

  /// Body-frame point at the anchor time plus the world translation offset;
  /// nullopt when the measurement time falls outside the buffer.
  std::optional<std::pair<Vec3, Vec3>> compensate(const LidarPoint& raw,
                                                  const PropagationBuffer& buffer,
                                                  const LidarExtrinsics& ext) const;
};

/// Full deskew of one point through the current estimate.
std::optional<Vec3> deskew_point(const LidarPoint& raw, const LidarScan& scan,
                                 const PropagationBuffer& buffer,
                                 const NominalState& x, const LidarExtrinsics& ext);

inline double point_to_plane_residual(const Vec3& p_w, const PlaneModel& plane) {
  if (!plane.valid) throw std::logic_error("point_to_plane_residual: invalid plane");
  return plane.distance_to(p_w);
}

/// Foot preintegration plus its world-frame anchor at the previous
/// correction and the current body-frame foot position.
struct FootMeasurement {
  FootPreintegration pre;
  Rot3 Psi_i;
  Vec3 s_i = Vec3::Zero();
  Vec3 foot_pos_body = Vec3::Zero();
};

struct EsikfReport {
  int iterations = 0;
  size_t matched = 0;
  size_t rejected = 0;
  size_t dropped = 0;  // outside buffer span
  double residual_rms = 0.0;
  bool degenerate = false;
};

/// Iterated MAP update: deskewed point-to-plane rows plus foot rows against
/// the propagated prior. On return the deskewed scan has been inserted into
/// the map and dirty planes refit.
EsikfReport esikf_update(NominalState& x, CovMatrix& P, const LidarScan& scan,
                         VoxelPlaneMap& map, const PropagationBuffer& buffer,
                         const LidarExtrinsics& ext,
                         const std::vector<FootMeasurement>& feet,
                         const EsikfConfig& cfg);

}  // namespace lvik
