#include "lvik/liko.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace lvik {

DeskewContext::DeskewContext(const LidarScan& scan, const PropagationBuffer& buffer) {
  t_base = scan.stamp - scan.period;
  t_min = buffer.front_stamp();
  t_max = buffer.back_stamp();
  const double t_anchor = std::clamp(scan.stamp, t_min, t_max);
  const auto [pose, vel] = buffer.pose_at(t_anchor);
  (void)vel;
  R_anchor_t = pose.rotation.matrix().transpose();
  p_anchor = pose.translation;
}

std::optional<std::pair<Vec3, Vec3>> DeskewContext::compensate(
    const LidarPoint& raw, const PropagationBuffer& buffer,
    const LidarExtrinsics& ext) const {
  const double t_p = t_base + raw.t_offset;
  if (t_p < t_min - 1e-9 || t_p > t_max + 1e-9) return std::nullopt;
  const auto [pose_p, vel_p] = buffer.pose_at(std::clamp(t_p, t_min, t_max));
  (void)vel_p;
  const Vec3 body_point = ext.R_lb * raw.xyz + ext.p_lb;
  const Vec3 q_b = R_anchor_t * (pose_p.rotation * body_point);
  const Vec3 offset = pose_p.translation - p_anchor;
  return std::make_pair(q_b, offset);
}

std::optional<Vec3> deskew_point(const LidarPoint& raw, const LidarScan& scan,
                                 const PropagationBuffer& buffer,
                                 const NominalState& x, const LidarExtrinsics& ext) {
  const DeskewContext ctx(scan, buffer);
  const auto comp = ctx.compensate(raw, buffer, ext);
  if (!comp) return std::nullopt;
  return x.R_w * comp->first + comp->second + x.p_w;
}

namespace {

struct PointRow {
  Vec3 q_b = Vec3::Zero();    // frozen body-frame point at the anchor
  Vec3 offset = Vec3::Zero(); // frozen world translation offset
  bool in_span = false;
};

}  // namespace

EsikfReport esikf_update(NominalState& x, CovMatrix& P, const LidarScan& scan,
                         VoxelPlaneMap& map, const PropagationBuffer& buffer,
                         const LidarExtrinsics& ext,
                         const std::vector<FootMeasurement>& feet,
                         const EsikfConfig& cfg) {
  using B = ErrorBlocks;
  if ((P - P.transpose()).cwiseAbs().maxCoeff() > 1e-9)
    throw std::invalid_argument("esikf_update: prior covariance not symmetric");

  EsikfReport report;
  const NominalState prior = x;
  const DeskewContext ctx(scan, buffer);

  // Motion compensation is independent of the iterate; do it once.
  const size_t n = scan.points.size();
  std::vector<PointRow> rows(n);
  const int workers = std::max(1, cfg.workers);
#ifdef _OPENMP
#pragma omp parallel for num_threads(workers) schedule(static)
#endif
  for (size_t i = 0; i < n; ++i) {
    const auto comp = ctx.compensate(scan.points[i], buffer, ext);
    if (!comp) continue;
    rows[i].q_b = comp->first;
    rows[i].offset = comp->second;
    rows[i].in_span = true;
  }
  for (const auto& r : rows)
    if (!r.in_span) ++report.dropped;

  const size_t stride =
      (cfg.max_points > 0 && n > static_cast<size_t>(cfg.max_points))
          ? (n + cfg.max_points - 1) / cfg.max_points
          : 1;

  Eigen::LDLT<CovMatrix> prior_ldlt(P);
  if (prior_ldlt.info() != Eigen::Success || !prior_ldlt.isPositive())
    throw std::invalid_argument("esikf_update: prior covariance not PSD");
  const CovMatrix P_inv = prior_ldlt.solve(CovMatrix::Identity());

  const std::vector<FootMeasurement>& active_feet =
      cfg.use_foot ? feet : std::vector<FootMeasurement>{};

  struct Slot {
    double r = 0.0;
    Vec3 d_theta = Vec3::Zero();
    Vec3 d_p = Vec3::Zero();
    int status = 0;  // 0 unused, 1 matched, 2 rejected
  };
  std::vector<Slot> slots(n);

  CovMatrix M = CovMatrix::Zero();
  bool have_linearization = false;

  for (int iter = 0; iter < cfg.max_iterations; ++iter) {
    const Mat3 R = x.R_w.matrix();
    const Vec3 p = x.p_w;

#ifdef _OPENMP
#pragma omp parallel for num_threads(workers) schedule(static)
#endif
    for (size_t i = 0; i < n; i += stride) {
      Slot& s = slots[i];
      s.status = 0;
      if (!rows[i].in_span) continue;
      const Vec3 world = R * rows[i].q_b + rows[i].offset + p;
      const auto plane = static_cast<const VoxelPlaneMap&>(map).query_plane(world);
      if (!plane) continue;
      const double r = plane->distance_to(world);
      const double gate = std::min(
          cfg.outlier_gate, cfg.assoc_gate_sigma * (cfg.sigma_point + plane->rms));
      if (std::abs(r) > gate) {
        s.status = 2;
        continue;
      }
      const Vec3 nrm = plane->normal();
      s.r = r;
      s.d_theta = -(nrm.transpose() * R * skew(rows[i].q_b)).transpose();
      s.d_p = nrm;
      s.status = 1;
    }

    // Deterministic reduction in point order; rows touch only (theta, p).
    MatN<6, 6> Hs = MatN<6, 6>::Zero();
    VecN<6> gs = VecN<6>::Zero();
    size_t matched = 0, rejected = 0;
    double sq_sum = 0.0;
    const double w_point = 1.0 / (cfg.sigma_point * cfg.sigma_point);
    for (size_t i = 0; i < n; i += stride) {
      const Slot& s = slots[i];
      if (s.status == 2) ++rejected;
      if (s.status != 1) continue;
      VecN<6> h;
      h << s.d_theta, s.d_p;
      Hs.noalias() += w_point * h * h.transpose();
      gs.noalias() += w_point * h * s.r;
      sq_sum += s.r * s.r;
      ++matched;
    }

    if (iter == 0 && matched < static_cast<size_t>(cfg.min_matches) &&
        active_feet.empty()) {
      report.degenerate = true;
      report.matched = matched;
      report.rejected = rejected;
      break;
    }

    M = CovMatrix::Zero();
    ErrorState g = ErrorState::Zero();
    M.block<3, 3>(B::kTheta, B::kTheta) += Hs.block<3, 3>(0, 0);
    M.block<3, 3>(B::kTheta, B::kP) += Hs.block<3, 3>(0, 3);
    M.block<3, 3>(B::kP, B::kTheta) += Hs.block<3, 3>(3, 0);
    M.block<3, 3>(B::kP, B::kP) += Hs.block<3, 3>(3, 3);
    g.segment<3>(B::kTheta) += gs.head<3>();
    g.segment<3>(B::kP) += gs.tail<3>();

    for (const auto& fm : active_feet) {
      const Vec3 r = liko_foot_residual(x, fm.foot_pos_body, fm.Psi_i, fm.s_i, fm.pre);
      const auto J = foot_jacobian_esikf(x, fm.pre, fm.foot_pos_body);
      Mat3 cov = fm.Psi_i.matrix() * fm.pre.cov.block<3, 3>(3, 3) *
                 fm.Psi_i.matrix().transpose();
      cov += Mat3::Identity() * 1e-12;
      const Mat3 info = cov.inverse();
      M.noalias() += J.transpose() * info * J;
      g.noalias() += J.transpose() * info * r;
    }

    // Prior term of the MAP cost, linearized at the current iterate.
    const ErrorState e0 = state_boxminus(x, prior);
    const CovMatrix Hb = boxminus_jacobian(x, prior);
    M.noalias() += Hb.transpose() * P_inv * Hb;
    g.noalias() += Hb.transpose() * P_inv * e0;
    have_linearization = true;

    const ErrorState delta = M.ldlt().solve(-g);
    x = state_boxplus(x, delta);
    ++report.iterations;
    report.matched = matched;
    report.rejected = rejected;
    report.residual_rms = matched ? std::sqrt(sq_sum / matched) : 0.0;
    if (delta.norm() < cfg.convergence_eps) break;
  }

  if (!report.degenerate && have_linearization) {
    CovMatrix post = M.ldlt().solve(CovMatrix::Identity());
    P = 0.5 * (post + post.transpose());
  }

  // Map insertion with the converged estimate.
  std::vector<Vec3> world_points;
  world_points.reserve(n);
  {
    const Mat3 R = x.R_w.matrix();
    const Vec3 p = x.p_w;
    for (size_t i = 0; i < n; ++i) {
      if (!rows[i].in_span) continue;
      world_points.push_back(R * rows[i].q_b + rows[i].offset + p);
    }
  }
  map.insert_scan_parallel(world_points, workers);
  map.refresh(workers);
  x.stamp = scan.stamp;
  return report;
}

}  // namespace lvik
