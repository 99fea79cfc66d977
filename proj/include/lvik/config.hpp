#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "lvik/imu.hpp"
#include "lvik/liko.hpp"
#include "lvik/viko_solver.hpp"

namespace lvik {

/// Per-sensor noise magnitudes driving the simulator; the estimator's
/// assumed noise levels live in the module configs below.
struct NoiseSpec {
  double accel = 0.02;        // m/s^2/sqrt(Hz)
  double gyro = 0.002;        // rad/s/sqrt(Hz)
  double accel_walk = 0.001;
  double gyro_walk = 0.0001;
  double lidar_range = 0.02;  // m
  double feature_px = 0.5;    // px at the nominal 460 px focal
  double joint_angle = 0.0005;  // rad
  double joint_rate = 0.005;    // rad/s
  double foot_twist_w = 0.02;   // rad/s
  double foot_twist_v = 0.02;   // m/s
  double track_loss = 0.02;     // per-observation dropout probability

  void zero() { *this = NoiseSpec{0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0}; }
};

struct WorldConfig {
  std::string kind = "default";  // default | corridor
  double corridor_length = 30.0;
  double corridor_width = 4.0;
  double room_size = 12.0;
  double height = 2.5;
  double landmark_spacing = 0.8;
};

struct GaitConfig {
  double duration = 30.0;
  double speed = 0.6;            // m/s cruise
  double cycle = 0.4;            // s per gait cycle
  double body_height = 0.30;
  double bounce_amplitude = 0.004;
  double swing_height = 0.05;
  double yaw_turn = 1.0;         // scales the built-in turn profile
};

struct RateConfig {
  double imu = 200.0;
  double joints = 200.0;
  double lidar = 10.0;
  double camera = 15.0;
  int lidar_points = 20000;
  int lidar_rings = 16;
};

struct SchedulerConfig {
  double imu_gap_warning = 0.5;  // s
  double gap_inflation = 4.0;    // covariance scale on a gap
};

/// Fully resolved run configuration. Unknown keys in the file are errors.
struct RunConfig {
  uint64_t seed = 1;
  int workers = 4;
  std::string mode = "lviq";  // lviq | liko | viko

  NoiseSpec noise;
  bool zero_noise = false;
  WorldConfig world;
  GaitConfig gait;
  RateConfig rates;
  ImuNoise imu_model;   // assumed densities in the estimator
  EsikfConfig liko;
  SolverConfig viko;
  SchedulerConfig scheduler;

  bool fix_extrinsics = true;
  std::string consistency_form = "shifted";   // shifted | paper
  std::string jacobian_form = "analytic";     // analytic | paper
  std::string foot_twist_source = "joints";   // joints | direct
  std::string cluster_source = "grid";        // grid | truth
  double foot_sigma_omega = 0.05;  // assumed twist noise in the estimator
  double foot_sigma_nu = 0.05;

  size_t eval_align_poses = 500;
  int eval_rpe_delta = 1;

  /// Apply cross-field consistency (flags into module configs).
  void finalize();
};

RunConfig default_config();
RunConfig load_config(const std::filesystem::path& file);
RunConfig parse_config_text(const std::string& text);
std::string config_echo(const RunConfig& cfg);

}  // namespace lvik
