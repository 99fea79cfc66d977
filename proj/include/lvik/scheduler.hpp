#pragma once

#include <deque>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "lvik/config.hpp"
#include "lvik/dataset.hpp"
#include "lvik/viko_solver.hpp"
#include "lvik/voxel_map.hpp"

namespace lvik {

/// Time-ordered heterogeneous sensor record. Ties dispatch IMU before
/// joints before LiDAR before camera.
struct MeasurementEvent {
  using Payload = std::variant<ImuSample, JointSample, std::array<FootTwist, kNumLegs>,
                               std::shared_ptr<const LidarScan>,
                               std::shared_ptr<const FeatureFrame>>;
  double stamp = 0.0;
  int rank = 0;  // 0 imu, 1 joints/twists, 2 lidar, 3 camera
  Payload payload;
};

/// Dataset rows merged into one dispatch stream.
std::vector<MeasurementEvent> build_event_stream(const Dataset& ds);

struct StepStats {
  size_t lidar_updates = 0;
  size_t camera_frames = 0;
  size_t camera_keyframes = 0;
  size_t rejected_events = 0;
  size_t imu_gap_warnings = 0;
  std::vector<double> liko_ms;
  std::vector<double> viko_ms;
};

/// The alternating estimation loop: IMU propagation feeds either the
/// LiDAR-kinematic filter update or the visual-kinematic window solve,
/// with a single (state, covariance) handoff between them.
class Pipeline {
 public:
  Pipeline(const RunConfig& cfg, const Calibration& calib);

  /// Seed from ground truth (position/orientation; zero velocity/biases).
  void initialize(const StampedPose& start);

  void step(const MeasurementEvent& event);
  void run(const std::vector<MeasurementEvent>& stream);

  const Trajectory& trajectory() const { return trajectory_; }
  const NominalState& state() const { return x_; }
  const CovMatrix& covariance() const { return P_; }
  const VoxelPlaneMap& map() const { return map_; }
  VoxelPlaneMap& map() { return map_; }
  const StepStats& stats() const { return stats_; }
  const std::vector<std::string>& log() const { return log_; }
  uint64_t map_digest() const { return map_.digest(); }

 private:
  void propagate_to(double stamp);
  void handle_imu(const ImuSample& s);
  void handle_joints(const JointSample& js);
  void handle_twists(const std::array<FootTwist, kNumLegs>& tws);
  void handle_lidar(const std::shared_ptr<const LidarScan>& scan);
  void handle_camera(const std::shared_ptr<const FeatureFrame>& frame);

  void reset_anchors(double stamp);
  std::vector<FootMeasurement> collect_foot_measurements(double t_end) const;
  std::optional<ImuPreintegration> preintegrate_imu_span(double t0, double t1) const;
  std::optional<FootPreintegration> preintegrate_foot_span(int leg, double t0,
                                                           double t1) const;
  std::vector<NdtCluster> build_frame_clusters(const NominalState& x) const;
  void prune_history();

  RunConfig cfg_;
  Calibration calib_;
  bool use_lidar_ = true;
  bool use_camera_ = true;
  bool initialized_ = false;

  NominalState x_;
  CovMatrix P_ = CovMatrix::Identity() * 1e-6;
  PropagationBuffer buffer_;
  std::optional<ImuSample> prev_imu_;
  double last_event_stamp_ = -1e18;

  std::deque<ImuSample> imu_hist_;
  std::array<std::deque<FootTwist>, kNumLegs> twist_hist_;
  std::optional<JointSample> last_joints_;

  // LIKO anchors at the previous correction.
  double anchor_stamp_ = -1.0;
  bool anchors_valid_ = false;
  std::array<Rot3, kNumLegs> anchor_R_;
  std::array<Vec3, kNumLegs> anchor_p_;

  VoxelPlaneMap map_;
  WindowOptimizer viko_;
  double last_keyframe_stamp_ = -1.0;

  // Latest deskewed scan (world frame) for cluster construction.
  std::vector<Vec3> last_scan_world_;
  std::vector<int32_t> last_scan_labels_;

  Trajectory trajectory_;
  StepStats stats_;
  std::vector<std::string> log_;
};

/// Convenience fold: initialize from the dataset ground truth and run.
Trajectory run_pipeline(const RunConfig& cfg, const Dataset& ds, Pipeline* out = nullptr);

}  // namespace lvik
