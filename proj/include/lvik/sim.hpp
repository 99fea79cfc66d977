#pragma once

#include <cstdint>
#include <vector>

#include "lvik/config.hpp"
#include "lvik/dataset.hpp"

namespace lvik {

/// Finite rectangular patch: corner + two orthogonal unit edges with extents.
struct PlanePatch {
  int32_t id = 0;
  Vec3 corner = Vec3::Zero();
  Vec3 edge_u = Vec3::UnitX();
  Vec3 edge_v = Vec3::UnitY();
  double extent_u = 1.0;
  double extent_v = 1.0;

  Vec3 normal() const { return edge_u.cross(edge_v).normalized(); }
};

struct Landmark {
  long id = 0;
  Vec3 position = Vec3::Zero();
  int32_t patch = 0;
};

struct PlaneWorld {
  std::vector<PlanePatch> patches;
  std::vector<Landmark> landmarks;
  uint64_t seed = 0;

  /// First patch hit along o + t d within [t_min, t_max]; -1 if none.
  std::pair<int, double> raycast(const Vec3& o, const Vec3& d, double t_min = 0.3,
                                 double t_max = 60.0) const;
};

PlaneWorld build_world(const WorldConfig& cfg, uint64_t seed);

/// Analytic body motion: clamped cubic splines for planar position and yaw,
/// sinusoids for height bounce, roll and pitch. Twice continuously
/// differentiable by construction.
class GaitTrajectory {
 public:
  GaitTrajectory(const WorldConfig& world, const GaitConfig& gait);

  double duration() const { return duration_; }

  struct BodyState {
    Vec3 p, v, a;       // world
    Rot3 R;
    Vec3 omega_body;    // body frame
  };
  BodyState body(double t) const;

  /// World-frame foot position and velocity (trot pattern, C2 swing blend).
  void foot(int leg, double t, const LegGeometry& geom, Vec3* pos, Vec3* vel) const;

  double gait_cycle() const { return gait_.cycle; }

 private:
  struct Spline {
    // natural/clamped cubic spline over knots t0 + i*dt
    double t0 = 0.0, dt = 1.0;
    std::vector<double> y, y2;  // values and second derivatives
    void build(const std::vector<double>& values, double t0, double dt,
               bool clamped_zero_slope);
    double eval(double t, int deriv) const;
  };

  Vec3 foothold(int leg, long cycle, const LegGeometry& geom) const;

  GaitConfig gait_;
  Spline sx_, sy_, syaw_;
  double duration_ = 0.0;
  double bounce_freq_ = 0.0;
  std::array<double, kNumLegs> phase_offset_{};
};

/// Everything one simulation run produces. Scans carry per-point patch
/// labels as a side channel (not part of the CSV format).
struct SimResult {
  Dataset dataset;
  std::vector<std::vector<int32_t>> scan_labels;  // per scan, per point
  PlaneWorld world;
};

SimResult simulate(const RunConfig& cfg);

}  // namespace lvik
