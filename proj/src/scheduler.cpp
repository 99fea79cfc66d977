#include "lvik/scheduler.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

namespace lvik {

namespace {

double now_ms() {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

}  // namespace

std::vector<MeasurementEvent> build_event_stream(const Dataset& ds) {
  std::vector<MeasurementEvent> events;
  events.reserve(ds.imu.size() + ds.joints.size() + ds.scans.size() +
                 ds.feature_frames.size());
  for (const auto& s : ds.imu) events.push_back({s.stamp, 0, s});
  for (const auto& js : ds.joints) events.push_back({js.stamp, 1, js});
  for (const auto& tws : ds.foot_twists) events.push_back({tws[0].stamp, 1, tws});
  for (const auto& scan : ds.scans) events.push_back({scan->stamp, 2, scan});
  for (const auto& f : ds.feature_frames) {
    auto ptr = std::make_shared<FeatureFrame>(f);
    events.push_back({f.stamp, 3, std::shared_ptr<const FeatureFrame>(ptr)});
  }
  std::stable_sort(events.begin(), events.end(),
                   [](const MeasurementEvent& a, const MeasurementEvent& b) {
                     if (a.stamp != b.stamp) return a.stamp < b.stamp;
                     return a.rank < b.rank;
                   });
  return events;
}

Pipeline::Pipeline(const RunConfig& cfg, const Calibration& calib)
    : cfg_(cfg), calib_(calib),
      map_(0.5, 50, 0.1, 5),
      viko_(cfg.viko) {
  use_lidar_ = cfg.mode != "viko";
  use_camera_ = cfg.mode != "liko";
}

void Pipeline::initialize(const StampedPose& start) {
  x_ = NominalState{};
  x_.p_w = start.pose.translation;
  x_.R_w = start.pose.rotation;
  x_.ext_cl = calib_.ext_cl;
  x_.ext_cr = calib_.ext_cr;
  x_.stamp = start.stamp;
  P_ = CovMatrix::Zero();
  using B = ErrorBlocks;
  P_.block<3, 3>(B::kTheta, B::kTheta) = Mat3::Identity() * 1e-6;
  P_.block<3, 3>(B::kP, B::kP) = Mat3::Identity() * 1e-6;
  P_.block<3, 3>(B::kThetaCl, B::kThetaCl) = Mat3::Identity() * 1e-10;
  P_.block<3, 3>(B::kPCl, B::kPCl) = Mat3::Identity() * 1e-10;
  P_.block<3, 3>(B::kThetaCr, B::kThetaCr) = Mat3::Identity() * 1e-10;
  P_.block<3, 3>(B::kPCr, B::kPCr) = Mat3::Identity() * 1e-10;
  P_.block<3, 3>(B::kV, B::kV) = Mat3::Identity() * 1e-4;
  P_.block<3, 3>(B::kBa, B::kBa) = Mat3::Identity() * 1e-4;
  P_.block<3, 3>(B::kBg, B::kBg) = Mat3::Identity() * 1e-6;
  buffer_.reset(x_.stamp, Pose3{x_.R_w, x_.p_w}, x_.v_w);
  last_event_stamp_ = x_.stamp;
  initialized_ = true;
  reset_anchors(x_.stamp);
}

void Pipeline::propagate_to(double stamp) {
  if (!prev_imu_ || stamp <= x_.stamp) return;
  ImuSample held = *prev_imu_;
  held.stamp = x_.stamp;
  imu_propagate(x_, P_, held, stamp - x_.stamp, cfg_.imu_model, &buffer_);
}

void Pipeline::handle_imu(const ImuSample& s) {
  if (prev_imu_ && s.stamp - prev_imu_->stamp > cfg_.scheduler.imu_gap_warning) {
    ++stats_.imu_gap_warnings;
    char line[128];
    std::snprintf(line, sizeof(line), "WARN t=%.6f imu gap %.3fs, covariance inflated",
                  s.stamp, s.stamp - prev_imu_->stamp);
    log_.push_back(line);
    P_ *= cfg_.scheduler.gap_inflation;
  }
  if (prev_imu_ && s.stamp > x_.stamp) {
    const double dt = s.stamp - x_.stamp;
    ImuSample mid = midpoint_sample(*prev_imu_, s, dt);
    mid.stamp = x_.stamp;
    imu_propagate(x_, P_, mid, dt, cfg_.imu_model, &buffer_);
  }
  prev_imu_ = s;
  imu_hist_.push_back(s);
}

void Pipeline::handle_joints(const JointSample& js) {
  last_joints_ = js;
  if (cfg_.foot_twist_source != "joints") return;
  const Vec3 gyro = prev_imu_ ? Vec3(prev_imu_->gyro - x_.b_g) : Vec3::Zero();
  FootTwistNoise noise{cfg_.foot_sigma_omega, cfg_.foot_sigma_nu};
  const auto twists = foot_twist_from_joints(js, gyro, x_.v_w, x_.R_w, calib_.legs, noise);
  for (int l = 0; l < kNumLegs; ++l) twist_hist_[l].push_back(twists[l]);
}

void Pipeline::handle_twists(const std::array<FootTwist, kNumLegs>& tws) {
  if (cfg_.foot_twist_source != "direct") return;
  for (int l = 0; l < kNumLegs; ++l) {
    FootTwist tw = tws[l];
    tw.sigma_omega = cfg_.foot_sigma_omega;
    tw.sigma_nu = cfg_.foot_sigma_nu;
    twist_hist_[l].push_back(tw);
  }
}

void Pipeline::reset_anchors(double stamp) {
  anchor_stamp_ = stamp;
  anchors_valid_ = false;
  if (!last_joints_) return;
  for (int l = 0; l < kNumLegs; ++l) {
    anchor_R_[l] =
        Rot3(x_.R_w.matrix() * calib_.legs.foot_orientation(l, last_joints_->q[l]));
    anchor_p_[l] = x_.p_w + x_.R_w * calib_.legs.fk(l, last_joints_->q[l]);
  }
  anchors_valid_ = true;
}

std::optional<FootPreintegration> Pipeline::preintegrate_foot_span(int leg, double t0,
                                                                   double t1) const {
  const auto& hist = twist_hist_[leg];
  std::vector<FootTwist> span;
  for (const auto& tw : hist) {
    if (tw.stamp >= t0 - 1e-9 && tw.stamp < t1 - 1e-9) span.push_back(tw);
  }
  if (span.empty()) return std::nullopt;
  // Midpoint-average consecutive samples: swing-phase foot accelerations are
  // fast enough that zero-order hold leaves a visible quadrature bias.
  std::vector<FootTwist> mid = span;
  for (size_t i = 0; i + 1 < span.size(); ++i) {
    mid[i].omega_xi = 0.5 * (span[i].omega_xi + span[i + 1].omega_xi);
    mid[i].nu_xi = 0.5 * (span[i].nu_xi + span[i + 1].nu_xi);
  }
  return preintegrate_foot(mid, t1);
}

std::optional<ImuPreintegration> Pipeline::preintegrate_imu_span(double t0,
                                                                 double t1) const {
  std::vector<ImuSample> span;
  for (const auto& s : imu_hist_) {
    if (s.stamp >= t0 - 1e-9 && s.stamp < t1 - 1e-9) span.push_back(s);
  }
  if (span.empty()) return std::nullopt;
  if (span.front().stamp > t0 + 1e-9) {
    // Cover the leading gap with the first sample.
    ImuSample lead = span.front();
    lead.stamp = t0;
    span.insert(span.begin(), lead);
  }
  return imu_preintegrate(span, x_.b_a, x_.b_g, cfg_.imu_model, t1);
}

std::vector<FootMeasurement> Pipeline::collect_foot_measurements(double t_end) const {
  std::vector<FootMeasurement> feet;
  if (!anchors_valid_ || !last_joints_ || !cfg_.liko.use_foot) return feet;
  for (int l = 0; l < kNumLegs; ++l) {
    auto pre = preintegrate_foot_span(l, anchor_stamp_, t_end);
    if (!pre || pre->count < 1) continue;
    FootMeasurement fm;
    fm.pre = *pre;
    fm.Psi_i = anchor_R_[l];
    fm.s_i = anchor_p_[l];
    fm.foot_pos_body = calib_.legs.fk(l, last_joints_->q[l]);
    feet.push_back(std::move(fm));
  }
  return feet;
}

void Pipeline::handle_lidar(const std::shared_ptr<const LidarScan>& scan) {
  propagate_to(scan->stamp);
  const auto feet = collect_foot_measurements(scan->stamp);

  const double t0 = now_ms();
  const auto rep = esikf_update(x_, P_, *scan, map_, buffer_, calib_.lidar, feet,
                                cfg_.liko);
  stats_.liko_ms.push_back(now_ms() - t0);

  // Keep the deskewed cloud for cluster construction at camera keyframes.
  {
    last_scan_world_.clear();
    last_scan_labels_.clear();
    const DeskewContext ctx(*scan, buffer_);
    const Mat3 R = x_.R_w.matrix();
    for (size_t i = 0; i < scan->points.size(); ++i) {
      const auto comp = ctx.compensate(scan->points[i], buffer_, calib_.lidar);
      if (!comp) continue;
      last_scan_world_.push_back(R * comp->first + comp->second + x_.p_w);
      if (i < scan->point_labels.size())
        last_scan_labels_.push_back(scan->point_labels[i]);
    }
    if (last_scan_labels_.size() != last_scan_world_.size()) last_scan_labels_.clear();
  }

  ++stats_.lidar_updates;
  char line[192];
  std::snprintf(line, sizeof(line),
                "LIKO t=%.6f iter=%d matched=%zu rejected=%zu dropped=%zu rms=%.6f%s",
                scan->stamp, rep.iterations, rep.matched, rep.rejected, rep.dropped,
                rep.residual_rms, rep.degenerate ? " degenerate" : "");
  log_.push_back(line);

  buffer_.reset(x_.stamp, Pose3{x_.R_w, x_.p_w}, x_.v_w);
  reset_anchors(x_.stamp);
  prune_history();
  trajectory_.push_back({x_.stamp, Pose3{x_.R_w, x_.p_w}});
}

std::vector<NdtCluster> Pipeline::build_frame_clusters(const NominalState& x) const {
  std::vector<NdtCluster> clusters;
  if (!cfg_.viko.use_consistency || last_scan_world_.empty()) return clusters;
  const Pose3 cam = Pose3{x.R_w, x.p_w} * calib_.ext_cl;
  const Pose3 cam_inv = cam.inverse();

  std::vector<Vec3> pts;
  std::vector<long> labels;
  const bool truth =
      cfg_.cluster_source == "truth" && !last_scan_labels_.empty();
  for (size_t i = 0; i < last_scan_world_.size(); ++i) {
    const Vec3 pc = cam_inv * last_scan_world_[i];
    if (pc.z() < 0.5 || pc.z() > 25.0) continue;
    const Vec2 uv(pc.x() / pc.z(), pc.y() / pc.z());
    if (std::abs(uv.x()) > 0.9 || std::abs(uv.y()) > 0.7) continue;
    pts.push_back(pc);
    labels.push_back(truth ? last_scan_labels_[i] : grid_cell_label(uv));
  }
  return build_clusters(pts, labels);
}

void Pipeline::handle_camera(const std::shared_ptr<const FeatureFrame>& frame) {
  propagate_to(frame->stamp);
  ++stats_.camera_frames;
  const double t0 = now_ms();

  WindowFrame wf;
  wf.state.base = x_;
  wf.stamp = frame->stamp;
  if (last_joints_) {
    wf.has_fk = true;
    for (int l = 0; l < kNumLegs; ++l) {
      wf.fk_pos[l] = calib_.legs.fk(l, last_joints_->q[l]);
      wf.fk_rot[l] = calib_.legs.foot_orientation(l, last_joints_->q[l]);
      wf.state.foot_R[l] = Rot3(x_.R_w.matrix() * wf.fk_rot[l]);
      wf.state.foot_p[l] = x_.p_w + x_.R_w * wf.fk_pos[l];
    }
  }
  wf.clusters = build_frame_clusters(x_);

  const double prev_stamp = last_keyframe_stamp_;
  if (viko_.size() > 0 && prev_stamp >= 0.0) {
    wf.imu_from_prev = preintegrate_imu_span(prev_stamp, frame->stamp);
    if (cfg_.viko.use_foot && wf.has_fk) {
      for (int l = 0; l < kNumLegs; ++l)
        wf.foot_from_prev[l] = preintegrate_foot_span(l, prev_stamp, frame->stamp);
    }
  }

  // Cluster association for the observations of this (host) frame.
  std::vector<FeatureObservation> obs = frame->observations;
  const bool grid_assoc = cfg_.cluster_source != "truth";
  for (auto& o : obs) {
    if (grid_assoc) o.cluster_id = grid_cell_label(o.left);
  }

  viko_.add_frame(std::move(wf), obs);
  viko_.triangulate_pending();

  bool emitted_keyframe = false;
  if (viko_.size() >= 2) {
    const auto rep = viko_.solve();
    char line[192];
    std::snprintf(line, sizeof(line),
                  "VIKO t=%.6f iter=%d cost %.6g -> %.6g frames=%d feat=%zu%s",
                  frame->stamp, rep.iterations, rep.initial_cost, rep.final_cost,
                  viko_.size(), viko_.tracks().size(),
                  rep.ill_conditioned ? " ill-conditioned" : "");
    log_.push_back(line);

    // Handoff: the newest frame's state and marginal covariance become the
    // filter's (x, P).
    const NominalState& newest = viko_.newest().base;
    x_.R_w = newest.R_w;
    x_.p_w = newest.p_w;
    x_.v_w = newest.v_w;
    x_.b_a = newest.b_a;
    x_.b_g = newest.b_g;
    x_.stamp = frame->stamp;
    if (auto cov = viko_.newest_marginal_covariance()) {
      using B = ErrorBlocks;
      CovMatrix P_new = CovMatrix::Zero();
      // Base block from the window marginal; extrinsic blocks carried over.
      P_new.block<15, 15>(0, 0).setZero();
      const auto& M = *cov;
      const int map_idx[5] = {B::kTheta, B::kP, B::kV, B::kBa, B::kBg};
      const int frame_idx[5] = {0, 3, 6, 9, 12};
      for (int a = 0; a < 5; ++a)
        for (int b = 0; b < 5; ++b)
          P_new.block<3, 3>(map_idx[a], map_idx[b]) =
              M.block<3, 3>(frame_idx[a], frame_idx[b]);
      P_new.block<6, 6>(B::kThetaCl, B::kThetaCl) =
          P_.block<6, 6>(B::kThetaCl, B::kThetaCl);
      P_new.block<6, 6>(B::kThetaCr, B::kThetaCr) =
          P_.block<6, 6>(B::kThetaCr, B::kThetaCr);
      P_ = 0.5 * (P_new + P_new.transpose());
    }
  }

  bool keyframe = true;
  if (viko_.over_capacity()) {
    if (viko_.keyframe_policy() == WindowOptimizer::SlideDecision::kKeyframe) {
      viko_.marginalize_oldest();
    } else {
      keyframe = false;
      // Splice the preintegrations across the removed frame.
      const int m = viko_.size() - 2;
      const double t_a = viko_.frame(m - 1).stamp;
      auto imu = preintegrate_imu_span(t_a, frame->stamp);
      std::array<std::optional<FootPreintegration>, kNumLegs> feet{};
      if (cfg_.viko.use_foot && viko_.frame(m).has_fk) {
        for (int l = 0; l < kNumLegs; ++l)
          feet[l] = preintegrate_foot_span(l, t_a, frame->stamp);
      }
      viko_.remove_second_newest(std::move(imu), std::move(feet));
    }
  }
  stats_.viko_ms.push_back(now_ms() - t0);

  if (viko_.size() >= 2 || keyframe) {
    last_keyframe_stamp_ = frame->stamp;
  }

  if (viko_.size() >= 2 && keyframe) {
    ++stats_.camera_keyframes;
    emitted_keyframe = true;
    buffer_.reset(x_.stamp, Pose3{x_.R_w, x_.p_w}, x_.v_w);
    reset_anchors(x_.stamp);
    trajectory_.push_back({x_.stamp, Pose3{x_.R_w, x_.p_w}});
  } else if (viko_.size() >= 2) {
    // Non-keyframe solve still re-anchors the filter at the solved state.
    buffer_.reset(x_.stamp, Pose3{x_.R_w, x_.p_w}, x_.v_w);
    reset_anchors(x_.stamp);
  }
  (void)emitted_keyframe;
  prune_history();
}

void Pipeline::prune_history() {
  double keep_from = anchor_stamp_;
  if (viko_.size() > 0) keep_from = std::min(keep_from, viko_.frame(0).stamp);
  keep_from -= 0.05;
  while (!imu_hist_.empty() && imu_hist_.front().stamp < keep_from) imu_hist_.pop_front();
  for (auto& hist : twist_hist_) {
    while (!hist.empty() && hist.front().stamp < keep_from) hist.pop_front();
  }
}

void Pipeline::step(const MeasurementEvent& event) {
  if (!initialized_) throw std::logic_error("pipeline not initialized");
  if (event.stamp < last_event_stamp_ - 1e-9) {
    ++stats_.rejected_events;
    char line[128];
    std::snprintf(line, sizeof(line), "WARN out-of-order event at t=%.6f dropped",
                  event.stamp);
    log_.push_back(line);
    return;
  }
  last_event_stamp_ = std::max(last_event_stamp_, event.stamp);

  switch (event.payload.index()) {
    case 0:
      handle_imu(std::get<ImuSample>(event.payload));
      break;
    case 1:
      handle_joints(std::get<JointSample>(event.payload));
      break;
    case 2:
      handle_twists(std::get<std::array<FootTwist, kNumLegs>>(event.payload));
      break;
    case 3:
      if (use_lidar_) handle_lidar(std::get<std::shared_ptr<const LidarScan>>(event.payload));
      break;
    case 4:
      if (use_camera_)
        handle_camera(std::get<std::shared_ptr<const FeatureFrame>>(event.payload));
      break;
  }
}

void Pipeline::run(const std::vector<MeasurementEvent>& stream) {
  for (const auto& e : stream) step(e);
}

Trajectory run_pipeline(const RunConfig& cfg, const Dataset& ds, Pipeline* out) {
  if (ds.ground_truth.empty()) throw DataError("dataset has no ground truth for init");
  Pipeline pipe(cfg, ds.calib);
  pipe.initialize(ds.ground_truth.front());
  pipe.run(build_event_stream(ds));
  Trajectory traj = pipe.trajectory();
  if (out) *out = std::move(pipe);
  return traj;
}

}  // namespace lvik
