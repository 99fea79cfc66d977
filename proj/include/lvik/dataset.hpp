#pragma once

#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "lvik/eval.hpp"
#include "lvik/kinematics.hpp"
#include "lvik/liko.hpp"
#include "lvik/viko_vision.hpp"

namespace lvik {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Sensor rig description stored alongside each dataset.
struct Calibration {
  LidarExtrinsics lidar;
  double lidar_period = 0.1;
  Pose3 ext_cl;
  Pose3 ext_cr;
  LegGeometry legs;
  double rate_imu = 200.0;
  double rate_joints = 200.0;
  double rate_lidar = 10.0;
  double rate_camera = 15.0;
};

/// On-disk dataset: calib.json, imu.csv, joints.csv, optional
/// foot_twists.csv, lidar/NNNNNN.csv, features.csv, gt.csv. All stamps are
/// seconds in decimal text; values round-trip exactly.
struct Dataset {
  Calibration calib;
  std::vector<ImuSample> imu;
  std::vector<JointSample> joints;
  std::vector<std::array<FootTwist, kNumLegs>> foot_twists;  // optional
  std::vector<std::shared_ptr<const LidarScan>> scans;
  std::vector<FeatureFrame> feature_frames;
  Trajectory ground_truth;
};

void write_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

void write_trajectory(const Trajectory& traj, const std::filesystem::path& file);
Trajectory read_trajectory(const std::filesystem::path& file);

/// Canonical text form of a trajectory (identical to the file contents).
std::string trajectory_text(const Trajectory& traj);

}  // namespace lvik
