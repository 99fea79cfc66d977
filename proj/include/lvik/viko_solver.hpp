#pragma once

#include <array>
#include <map>
#include <optional>
#include <vector>

#include "lvik/imu.hpp"
#include "lvik/kinematics.hpp"
#include "lvik/viko_vision.hpp"

namespace lvik {

struct SolverConfig {
  int max_iterations = 10;
  double huber_delta = 1.0;        // on the whitened visual residual norm
  double init_damping = 1e-4;
  double rel_cost_decrease = 1e-6;
  int max_escalations = 10;

  double visual_sigma = 1.5 / 460.0;  // 1.5 px at a nominal 460 px focal
  double w_co = 0.05;                 // depth-consistency weight
  double consistency_c1 = 0.95;
  double consistency_c2 = 0.05;
  bool use_consistency = true;
  bool consistency_paper_form = false;
  bool use_foot = true;
  bool fix_extrinsics = true;

  double fk_sigma_pos = 0.01;   // m, forward-kinematics coupling
  double fk_sigma_rot = 0.05;   // rad
  double anchor_sigma_vel = 0.1;
  double anchor_sigma_bias_a = 0.1;
  double anchor_sigma_bias_g = 0.01;

  int capacity = 10;                   // sliding window size
  double keyframe_parallax = 0.01;     // normalized units
  int keyframe_min_tracked = 40;
  double triangulation_min_parallax = 1.0 * M_PI / 180.0;
  double min_depth = 0.3;
  double max_depth = 150.0;

  ImuNoise imu_noise;
};

/// Per-frame window dimension: pose, velocity, biases, then per-leg foot
/// rotation/position when feet are part of the problem.
struct FrameBlocks {
  static constexpr int kTheta = 0;
  static constexpr int kP = 3;
  static constexpr int kV = 6;
  static constexpr int kBa = 9;
  static constexpr int kBg = 12;
  static constexpr int kBaseDim = 15;
  static int psi(int leg) { return kBaseDim + 6 * leg; }
  static int s(int leg) { return kBaseDim + 6 * leg + 3; }
  static int dim(bool with_feet) { return with_feet ? kBaseDim + 6 * kNumLegs : kBaseDim; }
};

VikoState frame_boxplus(const VikoState& x, const Eigen::Ref<const VecX>& dx,
                        bool with_feet);
VecX frame_boxminus(const VikoState& a, const VikoState& b, bool with_feet);

/// Linear multi-view triangulation in the first (host) camera frame.
/// `poses` are camera-in-world poses, `uv` normalized observations, one per
/// pose. Rejected when parallax is below min_parallax or the depth leaves
/// [min_depth, max_depth].
std::optional<double> triangulate_feature(const std::vector<Pose3>& poses,
                                          const std::vector<Vec2>& uv,
                                          double min_parallax = 1.0 * M_PI / 180.0,
                                          double min_depth = 0.3,
                                          double max_depth = 150.0);

/// Schur complement of the leading m dimensions of (H, g); returns the
/// reduced system on the trailing block.
std::pair<MatX, VecX> schur_eliminate(const MatX& H, const VecX& g, int m);

/// Dense linear prior on surviving window variables, produced by
/// marginalization: r(X) = r0 + A * (X boxminus X_lin).
struct PriorFactor {
  struct Var {
    enum Kind { kFrame, kExtrinsics, kFeature } kind = kFrame;
    int frame = -1;      // window index (maintained across slides)
    long feature = -1;
    int dim = 0;
    VikoState frame_lin;
    Pose3 ext_cl_lin, ext_cr_lin;
    double lambda_lin = 0.0;
  };
  std::vector<Var> vars;
  MatX A;
  VecX r0;

  int local_dim() const;
};

struct FeatureTrack {
  long id = -1;
  int host = -1;
  double inv_depth = -1.0;  // < 0 until triangulated
  long cluster_id = -1;     // -1: none
  struct Obs {
    int frame = -1;
    Vec2 left = Vec2::Zero();
    std::optional<Vec2> right;
  };
  std::vector<Obs> obs;

  const Obs* obs_in(int frame) const {
    for (const auto& o : obs)
      if (o.frame == frame) return &o;
    return nullptr;
  }
};

struct WindowFrame {
  VikoState state;
  double stamp = 0.0;
  bool has_fk = false;
  std::array<Vec3, kNumLegs> fk_pos;
  std::array<Mat3, kNumLegs> fk_rot;
  std::vector<NdtCluster> clusters;
  std::optional<ImuPreintegration> imu_from_prev;
  std::array<std::optional<FootPreintegration>, kNumLegs> foot_from_prev;
};

struct SolveReport {
  int iterations = 0;
  bool converged = false;
  bool ill_conditioned = false;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  std::map<std::string, double> cost_by_class;
  size_t invalid_projections = 0;
  int marginalized_dims = 0;  // from the most recent marginalization
};

/// Sliding-window nonlinear least squares over visual, depth-consistency,
/// foot-preintegration, IMU, forward-kinematics coupling, anchor, and
/// marginalization-prior terms, with Levenberg-Marquardt damping.
class WindowOptimizer {
 public:
  explicit WindowOptimizer(const SolverConfig& cfg) : cfg_(cfg) {}

  int size() const { return static_cast<int>(frames_.size()); }
  const WindowFrame& frame(int i) const { return frames_[i]; }
  WindowFrame& frame(int i) { return frames_[i]; }
  const std::map<long, FeatureTrack>& tracks() const { return tracks_; }
  const SolverConfig& config() const { return cfg_; }
  bool feet_in_problem() const { return feet_in_problem_; }

  /// Append a frame; the first frame installs the hard anchor.
  void add_frame(WindowFrame frame, const std::vector<FeatureObservation>& obs);

  /// Triangulate features that are not yet in the problem.
  void triangulate_pending();

  SolveReport solve();

  enum class SlideDecision { kKeyframe, kReplaceNewest };
  /// Parallax/track-count policy evaluated on the newest frame.
  SlideDecision keyframe_policy() const;

  /// True if the window exceeds capacity and must slide.
  bool over_capacity() const { return size() > cfg_.capacity; }

  /// Schur-marginalize the oldest frame (and features hosted there that
  /// cannot be re-hosted) into the prior.
  void marginalize_oldest();

  /// Drop the second-newest frame, splicing the supplied preintegrations
  /// over the merged interval.
  void remove_second_newest(
      std::optional<ImuPreintegration> spliced_imu,
      std::array<std::optional<FootPreintegration>, kNumLegs> spliced_feet);

  const std::optional<PriorFactor>& prior() const { return prior_; }

  /// Export current states, newest last.
  const VikoState& newest() const { return frames_.back().state; }
  VikoState& newest_mutable() { return frames_.back().state; }

  /// Marginal covariance of the newest frame's 15-dim base block from the
  /// final normal equations (undamped, at the current estimate).
  std::optional<MatN<15, 15>> newest_marginal_covariance();

  SlidingWindow snapshot() const;

  // Diagnostic hooks for linearization checks.
  int problem_dim() const;
  double total_cost(std::map<std::string, double>* by_class = nullptr) const;
  std::pair<MatX, VecX> normal_equations() const;
  /// Retract all window variables by delta (layout order).
  void perturb(const VecX& delta);

 private:
  struct Layout;

  Layout build_layout_() const;
  bool rehost_track_(FeatureTrack& track);
  double evaluate(const std::vector<WindowFrame>& frames,
                  const std::map<long, FeatureTrack>& tracks, const Pose3& ext_cl,
                  const Pose3& ext_cr, std::map<std::string, double>* by_class,
                  size_t* invalid) const;
  void linearize(const Layout& layout, MatX& H, VecX& g) const;
  void apply_step(const Layout& layout, const VecX& delta,
                  std::vector<WindowFrame>& frames,
                  std::map<long, FeatureTrack>& tracks, Pose3& ext_cl,
                  Pose3& ext_cr) const;

  SolverConfig cfg_;
  std::vector<WindowFrame> frames_;
  std::map<long, FeatureTrack> tracks_;
  std::optional<PriorFactor> prior_;
  bool anchor_active_ = false;
  VikoState anchor_target_;
  bool feet_in_problem_ = false;
  bool feet_mode_locked_ = false;
  Pose3 ext_cl_, ext_cr_;
  bool ext_initialized_ = false;
  int last_marginalized_dims_ = 0;
};

}  // namespace lvik
