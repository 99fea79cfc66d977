#include "lvik/sim.hpp"

#include <algorithm>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "lvik/rng.hpp"

namespace lvik {

namespace {

Mat3 rot_z(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 m;
  m << c, -s, 0, s, c, 0, 0, 0, 1;
  return m;
}

Mat3 rot_y(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 m;
  m << c, 0, s, 0, 1, 0, -s, 0, c;
  return m;
}

Mat3 rot_x(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 m;
  m << 1, 0, 0, 0, c, -s, 0, s, c;
  return m;
}

// Quintic smoothstep: zero first and second derivatives at both ends.
double h01(double s) { return s * s * s * (10.0 + s * (-15.0 + 6.0 * s)); }
double h01_d(double s) { return s * s * (30.0 + s * (-60.0 + 30.0 * s)); }
// C2 swing-height bump, peak 1 at s = 1/2.
double bump(double s) {
  const double w = s * (1.0 - s);
  return 64.0 * w * w * w;
}
double bump_d(double s) {
  const double w = s * (1.0 - s);
  return 192.0 * w * w * (1.0 - 2.0 * s);
}

}  // namespace

std::pair<int, double> PlaneWorld::raycast(const Vec3& o, const Vec3& d, double t_min,
                                           double t_max) const {
  int best = -1;
  double best_t = t_max;
  for (const auto& patch : patches) {
    const Vec3 n = patch.normal();
    const double denom = n.dot(d);
    if (std::abs(denom) < 1e-9) continue;
    const double t = n.dot(patch.corner - o) / denom;
    if (t < t_min || t >= best_t) continue;
    const Vec3 hit = o + t * d - patch.corner;
    const double su = hit.dot(patch.edge_u);
    const double sv = hit.dot(patch.edge_v);
    if (su < 0.0 || su > patch.extent_u || sv < 0.0 || sv > patch.extent_v) continue;
    best = patch.id;
    best_t = t;
  }
  return {best, best_t};
}

namespace {

void add_landmarks(PlaneWorld& world, double spacing, uint64_t seed) {
  long next_id = 0;
  for (const auto& patch : world.patches) {
    if (std::abs(patch.normal().z()) > 0.5) continue;  // vertical surfaces only
    const int nu = std::max(1, static_cast<int>(patch.extent_u / spacing));
    const int nv = std::max(1, static_cast<int>(patch.extent_v / spacing));
    for (int i = 0; i < nu; ++i) {
      for (int j = 0; j < nv; ++j) {
        const uint64_t c = static_cast<uint64_t>(patch.id) * 100003 +
                           static_cast<uint64_t>(i) * 311 + j;
        const double ju = 0.35 * spacing * (rng::uniform(seed, rng::kLandmarkJitter, 2 * c) - 0.5);
        const double jv = 0.35 * spacing * (rng::uniform(seed, rng::kLandmarkJitter, 2 * c + 1) - 0.5);
        const double su = std::clamp((i + 0.5) * spacing + ju, 0.05, patch.extent_u - 0.05);
        const double sv = std::clamp((j + 0.5) * spacing + jv, 0.05, patch.extent_v - 0.05);
        world.landmarks.push_back(
            {next_id++, patch.corner + su * patch.edge_u + sv * patch.edge_v, patch.id});
      }
    }
  }
}

void add_box(PlaneWorld& world, int32_t& id, const Vec3& corner, double sx, double sy,
             double sz) {
  // Four side faces and a top.
  world.patches.push_back({id++, corner, Vec3::UnitY(), Vec3::UnitZ(), sy, sz});
  world.patches.push_back(
      {id++, corner + Vec3(sx, 0, 0), Vec3::UnitY(), Vec3::UnitZ(), sy, sz});
  world.patches.push_back({id++, corner, Vec3::UnitX(), Vec3::UnitZ(), sx, sz});
  world.patches.push_back(
      {id++, corner + Vec3(0, sy, 0), Vec3::UnitX(), Vec3::UnitZ(), sx, sz});
  world.patches.push_back(
      {id++, corner + Vec3(0, 0, sz), Vec3::UnitX(), Vec3::UnitY(), sx, sy});
}

}  // namespace

PlaneWorld build_world(const WorldConfig& cfg, uint64_t seed) {
  PlaneWorld world;
  world.seed = seed;
  int32_t id = 0;
  const double L = cfg.corridor_length;
  const double w = cfg.corridor_width;
  const double h = cfg.height;

  if (cfg.kind == "corridor") {
    // Degenerate variant: floor and two parallel walls only; nothing bounds
    // translation along x.
    const double length = std::max(80.0, 2.0 * L);
    world.patches.push_back(
        {id++, Vec3(-10, -w / 2, 0), Vec3::UnitX(), Vec3::UnitY(), length + 20, w});
    world.patches.push_back(
        {id++, Vec3(-10, -w / 2, 0), Vec3::UnitX(), Vec3::UnitZ(), length + 20, h});
    world.patches.push_back(
        {id++, Vec3(-10, w / 2, 0), Vec3::UnitX(), Vec3::UnitZ(), length + 20, h});
    add_landmarks(world, cfg.landmark_spacing, seed);
    return world;
  }

  const double room = cfg.room_size;
  const double x_end = L + room;
  // Floor and ceiling over the full footprint.
  world.patches.push_back({id++, Vec3(-2, -room / 2 - 1, 0), Vec3::UnitX(),
                           Vec3::UnitY(), x_end + 4, room + 2});
  world.patches.push_back({id++, Vec3(-2, -room / 2 - 1, h), Vec3::UnitX(),
                           Vec3::UnitY(), x_end + 4, room + 2});
  // Corridor walls.
  world.patches.push_back({id++, Vec3(0, -w / 2, 0), Vec3::UnitX(), Vec3::UnitZ(), L, h});
  world.patches.push_back({id++, Vec3(0, w / 2, 0), Vec3::UnitX(), Vec3::UnitZ(), L, h});
  // Entrance wall behind the start.
  world.patches.push_back({id++, Vec3(0, -w / 2, 0), Vec3::UnitY(), Vec3::UnitZ(), w, h});
  // Room: front walls beside the corridor opening, side walls, back wall.
  world.patches.push_back(
      {id++, Vec3(L, w / 2, 0), Vec3::UnitY(), Vec3::UnitZ(), room / 2 - w / 2, h});
  world.patches.push_back(
      {id++, Vec3(L, -room / 2, 0), Vec3::UnitY(), Vec3::UnitZ(), room / 2 - w / 2, h});
  world.patches.push_back(
      {id++, Vec3(L, -room / 2, 0), Vec3::UnitX(), Vec3::UnitZ(), room, h});
  world.patches.push_back(
      {id++, Vec3(L, room / 2, 0), Vec3::UnitX(), Vec3::UnitZ(), room, h});
  world.patches.push_back(
      {id++, Vec3(x_end, -room / 2, 0), Vec3::UnitY(), Vec3::UnitZ(), room, h});
  // Baffles sticking out of alternating corridor walls; they pin x.
  for (int k = 0; k < 3; ++k) {
    const double x = 7.0 + 8.0 * k;
    if (x > L - 2) break;
    if (k % 2 == 0) {
      world.patches.push_back(
          {id++, Vec3(x, w / 2 - 1.0, 0), Vec3::UnitY(), Vec3::UnitZ(), 1.0, h});
    } else {
      world.patches.push_back(
          {id++, Vec3(x, -w / 2, 0), Vec3::UnitY(), Vec3::UnitZ(), 1.0, h});
    }
  }
  // Two pillars in the room.
  add_box(world, id, Vec3(L + 2.5, -3.0, 0), 0.5, 0.5, 1.6);
  add_box(world, id, Vec3(L + room - 3.0, 2.0, 0), 0.5, 0.5, 1.6);

  add_landmarks(world, cfg.landmark_spacing, seed);
  return world;
}

void GaitTrajectory::Spline::build(const std::vector<double>& values, double start,
                                   double spacing, bool clamped_zero_slope) {
  t0 = start;
  dt = spacing;
  y = values;
  const int n = static_cast<int>(y.size());
  y2.assign(n, 0.0);
  if (n < 3) return;

  // Thomas algorithm on the uniform-knot cubic spline system.
  std::vector<double> a(n, 0.0), b(n, 0.0), c(n, 0.0), d(n, 0.0);
  const double h = dt;
  if (clamped_zero_slope) {
    b[0] = h / 3.0;
    c[0] = h / 6.0;
    d[0] = (y[1] - y[0]) / h;  // minus zero slope
    a[n - 1] = h / 6.0;
    b[n - 1] = h / 3.0;
    d[n - 1] = -(y[n - 1] - y[n - 2]) / h;
  } else {
    b[0] = 1.0;
    b[n - 1] = 1.0;
  }
  for (int i = 1; i + 1 < n; ++i) {
    a[i] = h / 6.0;
    b[i] = 2.0 * h / 3.0;
    c[i] = h / 6.0;
    d[i] = (y[i + 1] - 2.0 * y[i] + y[i - 1]) / h;
  }
  for (int i = 1; i < n; ++i) {
    const double m = a[i] / b[i - 1];
    b[i] -= m * c[i - 1];
    d[i] -= m * d[i - 1];
  }
  y2[n - 1] = d[n - 1] / b[n - 1];
  for (int i = n - 2; i >= 0; --i) y2[i] = (d[i] - c[i] * y2[i + 1]) / b[i];
}

double GaitTrajectory::Spline::eval(double t, int deriv) const {
  const int n = static_cast<int>(y.size());
  if (n == 0) return 0.0;
  if (n == 1) return deriv == 0 ? y[0] : 0.0;
  t = std::clamp(t, t0, t0 + dt * (n - 1));
  int i = std::min(static_cast<int>((t - t0) / dt), n - 2);
  const double A = (t0 + dt * (i + 1) - t) / dt;
  const double B = 1.0 - A;
  switch (deriv) {
    case 0:
      return A * y[i] + B * y[i + 1] +
             ((A * A * A - A) * y2[i] + (B * B * B - B) * y2[i + 1]) * dt * dt / 6.0;
    case 1:
      return (y[i + 1] - y[i]) / dt +
             dt / 6.0 * (-(3.0 * A * A - 1.0) * y2[i] + (3.0 * B * B - 1.0) * y2[i + 1]);
    default:
      return A * y2[i] + B * y2[i + 1];
  }
}

GaitTrajectory::GaitTrajectory(const WorldConfig& world, const GaitConfig& gait)
    : gait_(gait) {
  duration_ = gait.duration;
  bounce_freq_ = 2.0 / gait.cycle;
  phase_offset_ = {0.0, 0.5, 0.5, 0.0};  // trot: FL+RR, FR+RL

  // Geometric path: out along y = -lane, U-turn, back along y = +lane, turn
  // again at the start; laps as needed. The corridor variant is a straight
  // line.
  struct Seg {
    int kind;  // 0 line, 1 arc
    Vec2 a;    // line start / arc center
    double heading, len, radius, a0, dir;
  };
  std::vector<Seg> segs;
  const double lane = 0.8;
  if (world.kind == "corridor") {
    segs.push_back({0, Vec2(2.0, 0.0), 0.0, 1e6, 0, 0, 0});
  } else {
    const double x0 = 2.0, x1 = world.corridor_length + world.room_size / 2.0;
    const double r = lane;
    int guard = 0;
    double need = gait.speed * duration_ + 5.0;
    double acc = 0.0;
    while (acc < need && guard++ < 32) {
      segs.push_back({0, Vec2(x0, -lane), 0.0, x1 - x0, 0, 0, 0});
      acc += x1 - x0;
      segs.push_back({1, Vec2(x1, 0.0), 0.0, M_PI * r, r, -M_PI / 2, +1.0});
      acc += M_PI * r;
      segs.push_back({0, Vec2(x1, lane), M_PI, x1 - x0, 0, 0, 0});
      acc += x1 - x0;
      segs.push_back({1, Vec2(x0, 0.0), 0.0, M_PI * r, r, M_PI / 2, +1.0});
      acc += M_PI * r;
    }
  }
  auto path_at = [&](double s) -> std::pair<Vec2, double> {
    for (const auto& seg : segs) {
      if (s > seg.len && &seg != &segs.back()) {
        s -= seg.len;
        continue;
      }
      s = std::min(s, seg.len);
      if (seg.kind == 0) {
        const Vec2 dir(std::cos(seg.heading), std::sin(seg.heading));
        return {seg.a + s * dir, seg.heading};
      }
      const double ang = seg.a0 + seg.dir * s / seg.radius;
      const Vec2 p = seg.a + seg.radius * Vec2(std::cos(ang), std::sin(ang));
      return {p, ang + seg.dir * M_PI / 2};
    }
    return {Vec2(0, 0), 0.0};
  };

  // Eased arclength profile: cosine ramps of tau seconds at both ends.
  const double tau = std::min(1.5, duration_ / 4.0);
  auto arclength = [&](double t) {
    const double v = gait.speed;
    auto ramp_area = [&](double x) {  // integral of v/2 (1 - cos(pi x / tau))
      return v * 0.5 * (x - tau / M_PI * std::sin(M_PI * x / tau));
    };
    if (t <= tau) return ramp_area(t);
    const double s_ramp = ramp_area(tau);
    if (t <= duration_ - tau) return s_ramp + v * (t - tau);
    const double tail = duration_ - t;
    return 2.0 * s_ramp + v * (duration_ - 2.0 * tau) - ramp_area(std::max(tail, 0.0));
  };

  const double knot_dt = 0.25;
  const int n_knots = static_cast<int>(duration_ / knot_dt) + 2;
  std::vector<double> xs(n_knots), ys(n_knots), yaws(n_knots);
  double prev_yaw = 0.0;
  for (int i = 0; i < n_knots; ++i) {
    const double t = std::min(i * knot_dt, duration_);
    const auto [p, heading] = path_at(arclength(t));
    xs[i] = p.x();
    ys[i] = p.y();
    double yw = heading;
    while (yw - prev_yaw > M_PI) yw -= 2.0 * M_PI;
    while (yw - prev_yaw < -M_PI) yw += 2.0 * M_PI;
    yaws[i] = yw;
    prev_yaw = yw;
  }
  sx_.build(xs, 0.0, knot_dt, true);
  sy_.build(ys, 0.0, knot_dt, true);
  syaw_.build(yaws, 0.0, knot_dt, true);
}

GaitTrajectory::BodyState GaitTrajectory::body(double t) const {
  BodyState st;
  const double wb = 2.0 * M_PI * bounce_freq_;
  const double roll_amp = 0.0015, pitch_amp = 0.002;

  const double roll = roll_amp * std::sin(wb * t + 0.7);
  const double pitch = pitch_amp * std::sin(wb * t + 1.9);
  const double yaw = syaw_.eval(t, 0);
  const double roll_d = roll_amp * wb * std::cos(wb * t + 0.7);
  const double pitch_d = pitch_amp * wb * std::cos(wb * t + 1.9);
  const double yaw_d = syaw_.eval(t, 1);

  // Bounce starts at rest so the initial state has zero velocity.
  st.p = Vec3(sx_.eval(t, 0), sy_.eval(t, 0),
              gait_.body_height + gait_.bounce_amplitude * (1.0 - std::cos(wb * t)));
  st.v = Vec3(sx_.eval(t, 1), sy_.eval(t, 1),
              gait_.bounce_amplitude * wb * std::sin(wb * t));
  st.a = Vec3(sx_.eval(t, 2), sy_.eval(t, 2),
              gait_.bounce_amplitude * wb * wb * std::cos(wb * t));

  const Mat3 Rx = rot_x(roll), Ry = rot_y(pitch), Rz = rot_z(yaw);
  st.R = Rot3(Rz * Ry * Rx);
  st.omega_body = roll_d * Vec3::UnitX() + pitch_d * (Rx.transpose() * Vec3::UnitY()) +
                  yaw_d * (Rx.transpose() * Ry.transpose() * Vec3::UnitZ());
  return st;
}

Vec3 GaitTrajectory::foothold(int leg, long cycle, const LegGeometry& geom) const {
  const double T = gait_.cycle;
  const double t_mid =
      std::clamp((cycle + 0.25 - phase_offset_[leg]) * T, 0.0, duration_);
  const double yaw = syaw_.eval(t_mid, 0);
  const Vec3 hip = geom.hip_offset[leg] +
                   Vec3(0.0, geom.lateral_sign(leg) * geom.l_hip, 0.0);
  const Vec2 base(sx_.eval(t_mid, 0), sy_.eval(t_mid, 0));
  const Mat3 Rz = rot_z(yaw);
  const Vec3 off = Rz * hip;
  return Vec3(base.x() + off.x(), base.y() + off.y(), 0.0);
}

void GaitTrajectory::foot(int leg, double t, const LegGeometry& geom, Vec3* pos,
                          Vec3* vel) const {
  const double T = gait_.cycle;
  const double tau_abs = t / T + phase_offset_[leg];
  const long n = static_cast<long>(std::floor(tau_abs));
  const double tau = tau_abs - n;

  const Vec3 A = foothold(leg, n, geom);
  if (tau < 0.5) {
    *pos = A;
    *vel = Vec3::Zero();
    return;
  }
  const Vec3 B = foothold(leg, n + 1, geom);
  const double s = 2.0 * (tau - 0.5);
  const double sd = 2.0 / T;
  *pos = A + (B - A) * h01(s) + Vec3(0, 0, gait_.swing_height * bump(s));
  *vel = (B - A) * h01_d(s) * sd + Vec3(0, 0, gait_.swing_height * bump_d(s) * sd);
}

namespace {

struct StereoRig {
  Pose3 ext_cl, ext_cr;
};

StereoRig default_rig() {
  Mat3 R;
  R.col(0) = Vec3(0, -1, 0);
  R.col(1) = Vec3(0, 0, -1);
  R.col(2) = Vec3(1, 0, 0);
  StereoRig rig;
  rig.ext_cl = Pose3{Rot3(R), Vec3(0.25, 0.10, 0.05)};
  rig.ext_cr = Pose3{Rot3(R), Vec3(0.25, -0.10, 0.05)};
  return rig;
}

}  // namespace

SimResult simulate(const RunConfig& cfg) {
  if (cfg.rates.imu <= 0 || cfg.rates.joints <= 0 || cfg.rates.lidar <= 0 ||
      cfg.rates.camera <= 0 || cfg.rates.lidar_points <= 0)
    throw std::invalid_argument("simulate: rates must be positive");

  SimResult out;
  out.world = build_world(cfg.world, cfg.seed);
  const GaitTrajectory gait(cfg.world, cfg.gait);
  const LegGeometry geom;
  const StereoRig rig = default_rig();
  const NoiseSpec& noise = cfg.noise;
  const uint64_t seed = cfg.seed;

  Dataset& ds = out.dataset;
  ds.calib.legs = geom;
  ds.calib.ext_cl = rig.ext_cl;
  ds.calib.ext_cr = rig.ext_cr;
  ds.calib.lidar.R_lb = Rot3();
  ds.calib.lidar.p_lb = Vec3(0.15, 0.0, 0.12);
  ds.calib.lidar_period = 1.0 / cfg.rates.lidar;
  ds.calib.rate_imu = cfg.rates.imu;
  ds.calib.rate_joints = cfg.rates.joints;
  ds.calib.rate_lidar = cfg.rates.lidar;
  ds.calib.rate_camera = cfg.rates.camera;

  const double duration = cfg.gait.duration;

  // IMU, joints, foot twists, ground truth at the proprioceptive rate.
  {
    const long n = static_cast<long>(duration * cfg.rates.imu);
    Vec3 bias_a = Vec3::Zero(), bias_g = Vec3::Zero();
    const double dt = 1.0 / cfg.rates.imu;
    for (long k = 0; k <= n; ++k) {
      const double t = static_cast<double>(k) / cfg.rates.imu;
      const auto body = gait.body(t);

      ImuSample s;
      s.stamp = t;
      s.accel = body.R.matrix().transpose() * (body.a - kGravity) + bias_a;
      s.gyro = body.omega_body + bias_g;
      for (int ax = 0; ax < 3; ++ax) {
        s.accel[ax] += noise.accel / std::sqrt(dt) *
                       rng::normal(seed, rng::kAccelNoise, 3 * k + ax);
        s.gyro[ax] += noise.gyro / std::sqrt(dt) *
                      rng::normal(seed, rng::kGyroNoise, 3 * k + ax);
        bias_a[ax] += noise.accel_walk * std::sqrt(dt) *
                      rng::normal(seed, rng::kAccelWalk, 3 * k + ax);
        bias_g[ax] += noise.gyro_walk * std::sqrt(dt) *
                      rng::normal(seed, rng::kGyroWalk, 3 * k + ax);
      }
      ds.imu.push_back(s);
      ds.ground_truth.push_back({t, Pose3{body.R, body.p}});
    }
  }

  {
    const long n = static_cast<long>(duration * cfg.rates.joints);
    for (long k = 0; k <= n; ++k) {
      const double t = static_cast<double>(k) / cfg.rates.joints;
      const auto body = gait.body(t);
      const Mat3 Rt = body.R.matrix().transpose();

      JointSample js;
      js.stamp = t;
      std::array<FootTwist, kNumLegs> twists;
      for (int l = 0; l < kNumLegs; ++l) {
        Vec3 foot_w, foot_v;
        gait.foot(l, t, geom, &foot_w, &foot_v);
        const Vec3 r_b = Rt * (foot_w - body.p);
        const auto q = geom.ik(l, r_b);
        if (!q)
          throw NumericalError("simulate: foot outside the leg workspace at t=" +
                               std::to_string(t));
        const Vec3 rel_vel = Rt * (foot_v - body.v) - body.omega_body.cross(r_b);
        const Vec3 qd = geom.fk_jacobian(l, *q).inverse() * rel_vel;
        js.q[l] = *q;
        js.qdot[l] = qd;

        // Truth twists in the foot frame, with their own noise channel.
        const Mat3 Rf = geom.foot_orientation(l, *q);
        FootTwist tw;
        tw.stamp = t;
        tw.leg = l;
        tw.nu_xi = Rf.transpose() * (Rt * body.v + body.omega_body.cross(r_b) +
                                     geom.fk_jacobian(l, *q) * qd);
        tw.omega_xi =
            Rf.transpose() * (body.omega_body + geom.relative_angular_velocity(l, *q, qd));
        tw.sigma_omega = cfg.foot_sigma_omega;
        tw.sigma_nu = cfg.foot_sigma_nu;
        for (int ax = 0; ax < 3; ++ax) {
          const uint64_t c = (static_cast<uint64_t>(k) * kNumLegs + l) * 3 + ax;
          tw.omega_xi[ax] += noise.foot_twist_w * rng::normal(seed, rng::kFootTwistAngular, c);
          tw.nu_xi[ax] += noise.foot_twist_v * rng::normal(seed, rng::kFootTwistLinear, c);
          js.q[l][ax] += noise.joint_angle * rng::normal(seed, rng::kJointAngle, c);
          js.qdot[l][ax] += noise.joint_rate * rng::normal(seed, rng::kJointRate, c);
        }
        twists[l] = tw;
      }
      ds.joints.push_back(js);
      ds.foot_twists.push_back(twists);
    }
  }

  // LiDAR sweeps with per-point time offsets across the scan period.
  {
    const int scans = static_cast<int>(duration * cfg.rates.lidar);
    const double period = 1.0 / cfg.rates.lidar;
    const int rings = std::max(1, cfg.rates.lidar_rings);
    const int cols = std::max(1, cfg.rates.lidar_points / rings);
    const Pose3 T_bl{ds.calib.lidar.R_lb, ds.calib.lidar.p_lb};

    for (int si = 0; si < scans; ++si) {
      const double t_start = static_cast<double>(si) / cfg.rates.lidar;
      auto scan = std::make_shared<LidarScan>();
      scan->stamp = static_cast<double>(si + 1) / cfg.rates.lidar;
      scan->period = period;
      const int total = cols * rings;
      std::vector<LidarPoint> pts(total);
      std::vector<int32_t> labels(total, -1);
      std::vector<char> valid(total, 0);

#ifdef _OPENMP
#pragma omp parallel for num_threads(std::max(1, cfg.workers)) schedule(static)
#endif
      for (int c = 0; c < cols; ++c) {
        const double t_off = period * static_cast<double>(c) / cols;
        const auto body = gait.body(t_start + t_off);
        const Pose3 T_wl = Pose3{body.R, body.p} * T_bl;
        for (int r = 0; r < rings; ++r) {
          const int i = c * rings + r;
          const double az = 2.0 * M_PI * static_cast<double>(c) / cols;
          const double el =
              rings == 1 ? 0.0
                         : (-15.0 + 30.0 * static_cast<double>(r) / (rings - 1)) *
                               M_PI / 180.0;
          const Vec3 d_l(std::cos(az) * std::cos(el), std::sin(az) * std::cos(el),
                         std::sin(el));
          const Vec3 d_w = T_wl.rotation * d_l;
          const auto [patch, dist] = out.world.raycast(T_wl.translation, d_w, 0.4, 50.0);
          if (patch < 0) continue;
          const double range =
              dist + noise.lidar_range *
                         rng::normal(seed, rng::kLidarRange,
                                     static_cast<uint64_t>(si) * total + i);
          pts[i] = {t_off, d_l * range};
          labels[i] = patch;
          valid[i] = 1;
        }
      }
      // Compact in index order.
      auto out_labels = std::vector<int32_t>();
      for (int i = 0; i < total; ++i) {
        if (!valid[i]) continue;
        scan->points.push_back(pts[i]);
        out_labels.push_back(labels[i]);
      }
      scan->point_labels = out_labels;
      out.scan_labels.push_back(std::move(out_labels));
      ds.scans.push_back(std::move(scan));
    }
  }

  // Stereo features with occlusion culling and track-loss simulation.
  {
    const long frames = static_cast<long>(duration * cfg.rates.camera);
    const double sigma_uv = noise.feature_px / 460.0;
    for (long fi = 0; fi <= frames; ++fi) {
      const double t = static_cast<double>(fi) / cfg.rates.camera;
      const auto body = gait.body(t);
      const Pose3 cam_l = Pose3{body.R, body.p} * rig.ext_cl;
      const Pose3 cam_r = Pose3{body.R, body.p} * rig.ext_cr;
      const Pose3 cam_l_inv = cam_l.inverse();
      const Pose3 cam_r_inv = cam_r.inverse();

      FeatureFrame frame;
      frame.stamp = t;
      for (const auto& lm : out.world.landmarks) {
        const Vec3 pl = cam_l_inv * lm.position;
        if (pl.z() < 0.5 || pl.z() > 25.0) continue;
        const Vec2 uv_l(pl.x() / pl.z(), pl.y() / pl.z());
        if (std::abs(uv_l.x()) > 0.9 || std::abs(uv_l.y()) > 0.7) continue;
        // Occlusion: anything strictly between the camera and the landmark.
        const Vec3 ray = lm.position - cam_l.translation;
        const double dist = ray.norm();
        const auto [hit, hit_t] = out.world.raycast(cam_l.translation, ray / dist,
                                                    0.05, dist - 0.02);
        if (hit >= 0 && hit_t < dist - 0.02) continue;
        const uint64_t c = static_cast<uint64_t>(fi) * 1000003 + lm.id;
        if (noise.track_loss > 0.0 &&
            rng::uniform(seed, rng::kTrackLoss, c) < noise.track_loss)
          continue;

        FeatureObservation obs;
        obs.stamp = t;
        obs.feature_id = lm.id;
        obs.left = uv_l + sigma_uv * Vec2(rng::normal(seed, rng::kFeaturePixel, 4 * c),
                                          rng::normal(seed, rng::kFeaturePixel, 4 * c + 1));
        const Vec3 pr = cam_r_inv * lm.position;
        if (pr.z() > 0.5) {
          const Vec2 uv_r(pr.x() / pr.z(), pr.y() / pr.z());
          if (std::abs(uv_r.x()) <= 0.9 && std::abs(uv_r.y()) <= 0.7) {
            obs.right = uv_r + sigma_uv *
                                   Vec2(rng::normal(seed, rng::kFeaturePixel, 4 * c + 2),
                                        rng::normal(seed, rng::kFeaturePixel, 4 * c + 3));
          }
        }
        obs.cluster_id = lm.patch;
        frame.observations.push_back(std::move(obs));
      }
      ds.feature_frames.push_back(std::move(frame));
    }
  }

  return out;
}

}  // namespace lvik
