#include "lvik/viko_solver.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

namespace lvik {

VikoState frame_boxplus(const VikoState& x, const Eigen::Ref<const VecX>& dx,
                        bool with_feet) {
  using F = FrameBlocks;
  VikoState out = x;
  out.base.R_w = x.base.R_w * Rot3::exp(dx.segment<3>(F::kTheta));
  out.base.p_w += dx.segment<3>(F::kP);
  out.base.v_w += dx.segment<3>(F::kV);
  out.base.b_a += dx.segment<3>(F::kBa);
  out.base.b_g += dx.segment<3>(F::kBg);
  if (with_feet) {
    for (int l = 0; l < kNumLegs; ++l) {
      out.foot_R[l] = x.foot_R[l] * Rot3::exp(dx.segment<3>(F::psi(l)));
      out.foot_p[l] += dx.segment<3>(F::s(l));
    }
  }
  return out;
}

VecX frame_boxminus(const VikoState& a, const VikoState& b, bool with_feet) {
  using F = FrameBlocks;
  VecX dx = VecX::Zero(F::dim(with_feet));
  dx.segment<3>(F::kTheta) = (b.base.R_w.inverse() * a.base.R_w).log();
  dx.segment<3>(F::kP) = a.base.p_w - b.base.p_w;
  dx.segment<3>(F::kV) = a.base.v_w - b.base.v_w;
  dx.segment<3>(F::kBa) = a.base.b_a - b.base.b_a;
  dx.segment<3>(F::kBg) = a.base.b_g - b.base.b_g;
  if (with_feet) {
    for (int l = 0; l < kNumLegs; ++l) {
      dx.segment<3>(F::psi(l)) = (b.foot_R[l].inverse() * a.foot_R[l]).log();
      dx.segment<3>(F::s(l)) = a.foot_p[l] - b.foot_p[l];
    }
  }
  return dx;
}

std::optional<double> triangulate_feature(const std::vector<Pose3>& poses,
                                          const std::vector<Vec2>& uv,
                                          double min_parallax, double min_depth,
                                          double max_depth) {
  if (poses.size() != uv.size() || poses.size() < 2) return std::nullopt;
  const Pose3 host_inv = poses.front().inverse();

  MatX A(2 * poses.size(), 4);
  for (size_t v = 0; v < poses.size(); ++v) {
    const Pose3 T_vh = poses[v].inverse() * poses.front();  // host -> view
    MatN<3, 4> P;
    P.leftCols<3>() = T_vh.rotation.matrix();
    P.col(3) = T_vh.translation;
    A.row(2 * v) = uv[v].x() * P.row(2) - P.row(0);
    A.row(2 * v + 1) = uv[v].y() * P.row(2) - P.row(1);
  }
  const Eigen::JacobiSVD<MatX> svd(A, Eigen::ComputeThinV);
  const Vec4 h = svd.matrixV().col(3);
  if (std::abs(h[3]) < 1e-12) return std::nullopt;
  const Vec3 Y = h.head<3>() / h[3];  // host camera frame

  if (!(Y.z() > min_depth) || !(Y.z() < max_depth)) return std::nullopt;

  double best_parallax = 0.0;
  for (size_t v = 1; v < poses.size(); ++v) {
    const Vec3 center_v = host_inv * poses[v].translation;  // in host frame
    const Vec3 d0 = Y.normalized();
    const Vec3 d1 = (Y - center_v).normalized();
    best_parallax = std::max(
        best_parallax, std::acos(std::clamp(d0.dot(d1), -1.0, 1.0)));
  }
  if (best_parallax < min_parallax) return std::nullopt;
  return 1.0 / Y.z();
}

std::pair<MatX, VecX> schur_eliminate(const MatX& H, const VecX& g, int m) {
  const int n = static_cast<int>(H.rows());
  if (m <= 0) return {H, g};
  if (m >= n) return {MatX::Zero(0, 0), VecX::Zero(0)};

  const MatX Hmm = H.topLeftCorner(m, m);
  const MatX Hmk = H.topRightCorner(m, n - m);
  const MatX Hkk = H.bottomRightCorner(n - m, n - m);
  const VecX gm = g.head(m);
  const VecX gk = g.tail(n - m);

  // Pseudo-inverse of the eliminated block; features seen once or gauge
  // directions make it rank-deficient.
  Eigen::SelfAdjointEigenSolver<MatX> eig(0.5 * (Hmm + Hmm.transpose()));
  const VecX ev = eig.eigenvalues();
  const double tol = std::max(1e-10 * ev.cwiseAbs().maxCoeff(), 1e-14);
  VecX inv_ev = VecX::Zero(m);
  for (int i = 0; i < m; ++i) inv_ev[i] = ev[i] > tol ? 1.0 / ev[i] : 0.0;
  const MatX Hmm_inv =
      eig.eigenvectors() * inv_ev.asDiagonal() * eig.eigenvectors().transpose();

  MatX Hr = Hkk - Hmk.transpose() * Hmm_inv * Hmk;
  VecX gr = gk - Hmk.transpose() * Hmm_inv * gm;
  Hr = 0.5 * (Hr + Hr.transpose()).eval();
  return {Hr, gr};
}

int PriorFactor::local_dim() const {
  int d = 0;
  for (const auto& v : vars) d += v.dim;
  return d;
}

namespace {

struct VarKey {
  enum Type { kFrame, kExt } type = kFrame;
  int frame = -1;
  bool operator<(const VarKey& o) const {
    if (type != o.type) return type < o.type;
    return frame < o.frame;
  }
  bool operator==(const VarKey&) const = default;
};

// One linearized factor: whitened residual, robust cost, and whitened
// Jacobian blocks keyed by variable.
struct FactorRows {
  const char* cls = "";
  VecX r;
  double cost = 0.0;
  std::vector<std::pair<VarKey, MatX>> jac;        // full frame/ext width
  std::vector<std::pair<long, VecX>> jac_feature;  // single column per id
  bool touches(const VarKey& k) const {
    for (const auto& [key, J] : jac)
      if (key == k) return true;
    return false;
  }
  bool touches_feature(long id) const {
    for (const auto& [fid, J] : jac_feature)
      if (fid == id) return true;
    return false;
  }
};

Mat3 sqrt_info_of(const Mat3& info) {
  Eigen::LLT<Mat3> llt(info);
  return llt.matrixU();
}

double huber_cost(double s, double delta) {
  return s <= delta * delta ? s : 2.0 * delta * std::sqrt(s) - delta * delta;
}

double huber_weight(double s, double delta) {
  return s <= delta * delta ? 1.0 : delta / std::sqrt(s);
}

}  // namespace

struct WindowOptimizer::Layout {
  bool with_feet = false;
  int frame_dim = 15;
  int num_frames = 0;
  int ext_offset = -1;
  std::vector<long> feature_ids;
  std::map<long, int> feature_col;
  int total_dim = 0;

  int frame_offset(int i) const { return i * frame_dim; }
  int col_of(const VarKey& k) const {
    return k.type == VarKey::kExt ? ext_offset : frame_offset(k.frame);
  }
  int width_of(const VarKey& k) const { return k.type == VarKey::kExt ? 12 : frame_dim; }
};

namespace {

// Everything factor evaluation needs, decoupled from the optimizer's
// committed state so candidate steps can be scored.
struct ProblemState {
  const std::vector<WindowFrame>* frames;
  const std::map<long, FeatureTrack>* tracks;
  Pose3 ext_cl, ext_cr;
};

}  // namespace

// Walks every factor of the current problem. `want_jac` controls whether
// Jacobian blocks are produced. Residuals and Jacobians are whitened by
// sqrt information and, for robust factors, by the IRLS sqrt weight; `cost`
// carries the exact robust cost.
static void scan_factors(const ProblemState& st, const SolverConfig& cfg,
                         bool with_feet, bool anchor_active,
                         const VikoState& anchor_target,
                         const std::optional<PriorFactor>& prior, bool want_jac,
                         size_t* invalid_count,
                         const std::function<void(FactorRows&&)>& sink) {
  using F = FrameBlocks;
  const auto& frames = *st.frames;
  const auto& tracks = *st.tracks;
  const int frame_dim = F::dim(with_feet);
  const int nf = static_cast<int>(frames.size());

  auto frame_block = [&](FactorRows& rows, int frame) -> MatX& {
    rows.jac.emplace_back(VarKey{VarKey::kFrame, frame},
                          MatX::Zero(rows.r.size(), frame_dim));
    return rows.jac.back().second;
  };
  auto ext_block = [&](FactorRows& rows) -> MatX& {
    rows.jac.emplace_back(VarKey{VarKey::kExt, -1}, MatX::Zero(rows.r.size(), 12));
    return rows.jac.back().second;
  };

  // Anchor on frame 0.
  if (anchor_active && nf > 0) {
    const NominalState& x0 = frames[0].state.base;
    const NominalState& xa = anchor_target.base;
    VecN<15> r;
    const Vec3 r_rot = (xa.R_w.inverse() * x0.R_w).log();
    r << r_rot, x0.p_w - xa.p_w, x0.v_w - xa.v_w, x0.b_a - xa.b_a, x0.b_g - xa.b_g;
    VecN<15> w;
    w << Vec3::Constant(1e4), Vec3::Constant(1e4),
        Vec3::Constant(1.0 / cfg.anchor_sigma_vel),
        Vec3::Constant(1.0 / cfg.anchor_sigma_bias_a),
        Vec3::Constant(1.0 / cfg.anchor_sigma_bias_g);

    FactorRows rows;
    rows.cls = "anchor";
    rows.r = w.asDiagonal() * r;
    rows.cost = rows.r.squaredNorm();
    if (want_jac) {
      MatN<15, 15> J = MatN<15, 15>::Identity();
      J.block<3, 3>(0, 0) = so3_right_jacobian_inv(r_rot);
      MatX& B = frame_block(rows, 0);
      B.leftCols<15>() = w.asDiagonal() * J;
    }
    sink(std::move(rows));
  }

  // IMU preintegration between consecutive frames.
  for (int j = 1; j < nf; ++j) {
    const auto& pre_opt = frames[j].imu_from_prev;
    if (!pre_opt) continue;
    const ImuPreintegration& pre = *pre_opt;
    const NominalState& xi = frames[j - 1].state.base;
    const NominalState& xj = frames[j].state.base;
    const double dt = pre.duration;
    const Mat3 Ri_t = xi.R_w.matrix().transpose();

    const Rot3 dR_corr = pre.corrected_dR(xi.b_g);
    const Vec3 dv_corr = pre.corrected_dv(xi.b_a, xi.b_g);
    const Vec3 dp_corr = pre.corrected_dp(xi.b_a, xi.b_g);

    const Vec3 r_R = so3_log(dR_corr.matrix().transpose() * Ri_t * xj.R_w.matrix());
    const Vec3 u_v = xj.v_w - xi.v_w - kGravity * dt;
    const Vec3 u_p = xj.p_w - xi.p_w - xi.v_w * dt - 0.5 * kGravity * dt * dt;
    VecN<15> r;
    r << r_R, Ri_t * u_v - dv_corr, Ri_t * u_p - dp_corr, xj.b_a - xi.b_a,
        xj.b_g - xi.b_g;

    MatN<15, 15> info = (pre.cov + 1e-14 * MatN<15, 15>::Identity()).inverse();
    info = 0.5 * (info + info.transpose()).eval();
    Eigen::LLT<MatN<15, 15>> llt(info);
    const MatN<15, 15> W = llt.matrixU();

    FactorRows rows;
    rows.cls = "imu";
    rows.r = W * r;
    rows.cost = rows.r.squaredNorm();
    if (want_jac) {
      MatN<15, 15> Ji = MatN<15, 15>::Zero();
      MatN<15, 15> Jj = MatN<15, 15>::Zero();
      const Mat3 Jri = so3_right_jacobian_inv(r_R);
      const Mat3 Jli = so3_right_jacobian_inv(-r_R);  // left-Jacobian inverse
      const Vec3 dbg = xi.b_g - pre.bias_g;
      Ji.block<3, 3>(0, F::kTheta) =
          -Jri * xj.R_w.matrix().transpose() * xi.R_w.matrix();
      Ji.block<3, 3>(0, F::kBg) =
          -Jli * so3_right_jacobian(pre.dR_dbg * dbg) * pre.dR_dbg;
      Ji.block<3, 3>(3, F::kTheta) = skew(Ri_t * u_v);
      Ji.block<3, 3>(3, F::kV) = -Ri_t;
      Ji.block<3, 3>(3, F::kBa) = -pre.dv_dba;
      Ji.block<3, 3>(3, F::kBg) = -pre.dv_dbg;
      Ji.block<3, 3>(6, F::kTheta) = skew(Ri_t * u_p);
      Ji.block<3, 3>(6, F::kP) = -Ri_t;
      Ji.block<3, 3>(6, F::kV) = -Ri_t * dt;
      Ji.block<3, 3>(6, F::kBa) = -pre.dp_dba;
      Ji.block<3, 3>(6, F::kBg) = -pre.dp_dbg;
      Ji.block<3, 3>(9, F::kBa) = -Mat3::Identity();
      Ji.block<3, 3>(12, F::kBg) = -Mat3::Identity();

      Jj.block<3, 3>(0, F::kTheta) = Jri;
      Jj.block<3, 3>(3, F::kV) = Ri_t;
      Jj.block<3, 3>(6, F::kP) = Ri_t;
      Jj.block<3, 3>(9, F::kBa) = Mat3::Identity();
      Jj.block<3, 3>(12, F::kBg) = Mat3::Identity();

      MatX& Bi = frame_block(rows, j - 1);
      Bi.leftCols<15>() = W * Ji;
      MatX& Bj = frame_block(rows, j);
      Bj.leftCols<15>() = W * Jj;
    }
    sink(std::move(rows));
  }

  // Foot preintegration and forward-kinematics coupling.
  if (with_feet) {
    for (int j = 1; j < nf; ++j) {
      for (int l = 0; l < kNumLegs; ++l) {
        const auto& pre_opt = frames[j].foot_from_prev[l];
        if (!pre_opt) continue;
        const FootPreintegration& pre = *pre_opt;
        const Rot3& Psi_i = frames[j - 1].state.foot_R[l];
        const Rot3& Psi_j = frames[j].state.foot_R[l];
        const Vec3& s_i = frames[j - 1].state.foot_p[l];
        const Vec3& s_j = frames[j].state.foot_p[l];

        const auto [r_R, r_p] = foot_residuals(Psi_i, s_i, Psi_j, s_j, pre);
        VecN<6> r;
        r << r_R, r_p;
        MatN<6, 6> info = (pre.cov + 1e-12 * MatN<6, 6>::Identity()).inverse();
        info = 0.5 * (info + info.transpose()).eval();
        Eigen::LLT<MatN<6, 6>> llt(info);
        const MatN<6, 6> W = llt.matrixU();

        FactorRows rows;
        rows.cls = "foot";
        rows.r = W * r;
        rows.cost = rows.r.squaredNorm();
        if (want_jac) {
          MatN<6, 6> Ji = MatN<6, 6>::Zero();
          MatN<6, 6> Jj = MatN<6, 6>::Zero();
          Ji.block<3, 3>(0, 0) =
              -so3_right_jacobian_inv(-r_R) * pre.dPsi.matrix().transpose();
          Ji.block<3, 3>(3, 0) = skew(Psi_i.matrix().transpose() * (s_j - s_i));
          Ji.block<3, 3>(3, 3) = -Psi_i.matrix().transpose();
          Jj.block<3, 3>(0, 0) = so3_right_jacobian_inv(r_R);
          Jj.block<3, 3>(3, 3) = Psi_i.matrix().transpose();

          MatX& Bi = frame_block(rows, j - 1);
          Bi.block<6, 6>(0, F::psi(l)) = W * Ji;
          MatX& Bj = frame_block(rows, j);
          Bj.block<6, 6>(0, F::psi(l)) = W * Jj;
        }
        sink(std::move(rows));
      }
    }

    for (int i = 0; i < nf; ++i) {
      if (!frames[i].has_fk) continue;
      for (int l = 0; l < kNumLegs; ++l) {
        const NominalState& x = frames[i].state.base;
        const Rot3& Psi = frames[i].state.foot_R[l];
        const Vec3& s = frames[i].state.foot_p[l];
        const Mat3 Ri_t = x.R_w.matrix().transpose();
        const Mat3& Rq = frames[i].fk_rot[l];

        const Vec3 r_rot = so3_log(Rq.transpose() * Ri_t * Psi.matrix());
        const Vec3 r_pos = Ri_t * (s - x.p_w) - frames[i].fk_pos[l];
        VecN<6> r;
        r << r_rot / cfg.fk_sigma_rot, r_pos / cfg.fk_sigma_pos;

        FactorRows rows;
        rows.cls = "fk";
        rows.r = r;
        rows.cost = rows.r.squaredNorm();
        if (want_jac) {
          MatX& B = frame_block(rows, i);
          B.block<3, 3>(0, F::kTheta) =
              -so3_right_jacobian_inv(-r_rot) * Rq.transpose() / cfg.fk_sigma_rot;
          B.block<3, 3>(0, F::psi(l)) = so3_right_jacobian_inv(r_rot) / cfg.fk_sigma_rot;
          B.block<3, 3>(3, F::kTheta) = skew(Ri_t * (s - x.p_w)) / cfg.fk_sigma_pos;
          B.block<3, 3>(3, F::kP) = -Ri_t / cfg.fk_sigma_pos;
          B.block<3, 3>(3, F::s(l)) = Ri_t / cfg.fk_sigma_pos;
        }
        sink(std::move(rows));
      }
    }
  }

  // Visual and depth-consistency factors.
  const double inv_sigma = 1.0 / cfg.visual_sigma;
  for (const auto& [fid, track] : tracks) {
    if (!(track.inv_depth > 0.0)) continue;
    if (track.host < 0 || track.host >= nf) continue;
    const FeatureTrack::Obs* host_obs = track.obs_in(track.host);
    if (!host_obs) continue;
    const double lambda = track.inv_depth;
    const NominalState& host = frames[track.host].state.base;
    const Vec3 f_host(host_obs->left.x(), host_obs->left.y(), 1.0);

    const Vec3 cam_point = f_host / lambda;
    const Pose3 T_w_hostcam = Pose3{host.R_w, host.p_w} * st.ext_cl;
    const Vec3 X_b_host = st.ext_cl * cam_point;
    const Vec3 X_w = T_w_hostcam * cam_point;

    for (const auto& o : track.obs) {
      if (o.frame < 0 || o.frame >= nf) continue;
      const bool is_host = o.frame == track.host;
      const NominalState& obs_state = frames[o.frame].state.base;

      struct View {
        const Pose3* ext;
        Vec2 meas;
        bool right;
      };
      std::vector<View> views;
      if (!is_host) views.push_back({&st.ext_cl, o.left, false});
      if (o.right) views.push_back({&st.ext_cr, *o.right, true});
      if (views.empty()) continue;

      VecX r_stack(2 * views.size());
      std::vector<MatN<2, 3>> dpi_dXc(views.size());
      std::vector<Mat3> Rc_t(views.size());
      std::vector<Vec3> Xb_obs(views.size()), Xc(views.size());
      bool any_valid = false;
      std::vector<bool> valid(views.size(), false);
      for (size_t v = 0; v < views.size(); ++v) {
        const Pose3 cam = Pose3{obs_state.R_w, obs_state.p_w} * (*views[v].ext);
        const Vec3 pc = cam.inverse() * X_w;
        Xc[v] = pc;
        if (pc.z() <= 1e-3) {
          if (invalid_count) ++(*invalid_count);
          r_stack.segment<2>(2 * v).setZero();
          continue;
        }
        valid[v] = true;
        any_valid = true;
        r_stack.segment<2>(2 * v) =
            (Vec2(pc.x() / pc.z(), pc.y() / pc.z()) - views[v].meas) * inv_sigma;
        MatN<2, 3> dpi;
        dpi << 1.0 / pc.z(), 0.0, -pc.x() / (pc.z() * pc.z()), 0.0, 1.0 / pc.z(),
            -pc.y() / (pc.z() * pc.z());
        dpi_dXc[v] = dpi * inv_sigma;
        Rc_t[v] = views[v].ext->rotation.matrix().transpose();
        Xb_obs[v] = obs_state.R_w.matrix().transpose() * (X_w - obs_state.p_w);
      }
      if (!any_valid) continue;

      const double s = r_stack.squaredNorm();
      const double w = huber_weight(s, cfg.huber_delta);
      const double sw = std::sqrt(w);

      FactorRows rows;
      rows.cls = "visual";
      rows.r = sw * r_stack;
      rows.cost = huber_cost(s, cfg.huber_delta);
      if (want_jac) {
        MatX J_host = MatX::Zero(r_stack.size(), frame_dim);
        MatX J_obs = MatX::Zero(r_stack.size(), frame_dim);
        VecX J_lambda = VecX::Zero(r_stack.size());
        MatX J_ext = MatX::Zero(r_stack.size(), 12);
        const Mat3 Rj_t = obs_state.R_w.matrix().transpose();
        for (size_t v = 0; v < views.size(); ++v) {
          if (!valid[v]) continue;
          const MatN<2, 3> dXc = dpi_dXc[v] * Rc_t[v] * Rj_t;  // d r / d X_w
          J_host.block<2, 3>(2 * v, F::kTheta) =
              dXc * (-host.R_w.matrix() * skew(X_b_host));
          J_host.block<2, 3>(2 * v, F::kP) = dXc;
          J_obs.block<2, 3>(2 * v, F::kTheta) =
              dpi_dXc[v] * Rc_t[v] * skew(Xb_obs[v]);
          J_obs.block<2, 3>(2 * v, F::kP) = -dXc;
          J_lambda.segment<2>(2 * v) =
              dXc * (host.R_w.matrix() * st.ext_cl.rotation.matrix() *
                     (-cam_point / lambda));
          if (!cfg.fix_extrinsics) {
            // Host side: world point moves with the left extrinsic.
            J_ext.block<2, 3>(2 * v, 0) =
                dXc * (host.R_w.matrix() *
                       (-st.ext_cl.rotation.matrix() * skew(cam_point)));
            J_ext.block<2, 3>(2 * v, 3) = dXc * host.R_w.matrix();
            // Observer side: the projecting camera's own extrinsic.
            const int col = views[v].right ? 6 : 0;
            J_ext.block<2, 3>(2 * v, col) += dpi_dXc[v] * skew(Xc[v]);
            J_ext.block<2, 3>(2 * v, col + 3) += -dpi_dXc[v] * Rc_t[v];
          }
        }
        if (track.host == o.frame) {
          J_host += J_obs;
          MatX& B = frame_block(rows, track.host);
          B = sw * J_host;
        } else {
          MatX& Bh = frame_block(rows, track.host);
          Bh = sw * J_host;
          MatX& Bo = frame_block(rows, o.frame);
          Bo = sw * J_obs;
        }
        rows.jac_feature.emplace_back(fid, (sw * J_lambda).eval());
        if (!cfg.fix_extrinsics) {
          MatX& Be = ext_block(rows);
          Be = sw * J_ext;
        }
      }
      sink(std::move(rows));
    }

    // Depth consistency against the host keyframe's cluster.
    if (cfg.use_consistency && track.cluster_id >= 0) {
      const NdtCluster* cluster = nullptr;
      for (const auto& c : frames[track.host].clusters) {
        if (c.cluster_id == track.cluster_id) {
          cluster = &c;
          break;
        }
      }
      if (cluster) {
        const ConsistencyConstants k =
            ConsistencyConstants::from(cfg.consistency_c1, cfg.consistency_c2);
        const Vec3 z = cam_point - cluster->mean;
        const Mat3 W = sqrt_info_of(cluster->info);
        const Vec3 e = W * z;
        const double d = e.squaredNorm();
        FactorRows rows;
        rows.cls = "consistency";
        if (cfg.consistency_paper_form) {
          const double sc = k.score(d);
          rows.r = VecX::Constant(1, std::sqrt(cfg.w_co) * sc);
          rows.cost = cfg.w_co * sc * sc;
          if (want_jac) {
            const double dscore_dd = 0.5 * k.a1 * k.a2 * std::exp(-0.5 * k.a2 * d);
            const double dd_dlambda =
                2.0 * (W.transpose() * e).dot(-f_host / (lambda * lambda));
            rows.jac_feature.emplace_back(
                fid, VecX::Constant(1, std::sqrt(cfg.w_co) * dscore_dd * dd_dlambda));
          }
        } else {
          // Shifted NLL as a reweighted least-squares kernel on the
          // whitened 3-vector.
          const double rho = cfg.w_co * k.a1 * (std::exp(-0.5 * k.a2 * d) - 1.0);
          const double rho_p =
              -0.5 * cfg.w_co * k.a1 * k.a2 * std::exp(-0.5 * k.a2 * d);
          const double sw = std::sqrt(std::max(rho_p, 1e-16));
          rows.r = sw * e;
          rows.cost = rho;
          if (want_jac) {
            const Vec3 de_dlambda = W * (-f_host / (lambda * lambda));
            rows.jac_feature.emplace_back(fid, (sw * de_dlambda).eval());
          }
        }
        sink(std::move(rows));
      }
    }
  }

  // Marginalization prior.
  if (prior) {
    VecX delta = VecX::Zero(prior->local_dim());
    int off = 0;
    bool stale = false;
    for (const auto& var : prior->vars) {
      if (var.kind == PriorFactor::Var::kFrame) {
        if (var.frame < 0 || var.frame >= nf) {
          stale = true;
          break;
        }
        delta.segment(off, var.dim) =
            frame_boxminus(frames[var.frame].state, var.frame_lin, with_feet);
      } else if (var.kind == PriorFactor::Var::kExtrinsics) {
        VecN<12> d;
        d.segment<3>(0) = (var.ext_cl_lin.rotation.inverse() * st.ext_cl.rotation).log();
        d.segment<3>(3) = st.ext_cl.translation - var.ext_cl_lin.translation;
        d.segment<3>(6) = (var.ext_cr_lin.rotation.inverse() * st.ext_cr.rotation).log();
        d.segment<3>(9) = st.ext_cr.translation - var.ext_cr_lin.translation;
        delta.segment(off, 12) = d;
      }
      off += var.dim;
    }
    if (!stale) {
      FactorRows rows;
      rows.cls = "prior";
      rows.r = prior->r0 + prior->A * delta;
      rows.cost = rows.r.squaredNorm();
      if (want_jac) {
        off = 0;
        for (const auto& var : prior->vars) {
          if (var.kind == PriorFactor::Var::kFrame) {
            rows.jac.emplace_back(VarKey{VarKey::kFrame, var.frame},
                                  prior->A.middleCols(off, var.dim));
          } else {
            rows.jac.emplace_back(VarKey{VarKey::kExt, -1},
                                  prior->A.middleCols(off, var.dim));
          }
          off += var.dim;
        }
      }
      sink(std::move(rows));
    }
  }
}

void WindowOptimizer::add_frame(WindowFrame frame,
                                const std::vector<FeatureObservation>& obs) {
  if (frames_.empty()) {
    anchor_target_ = frame.state;
    anchor_active_ = true;
    feet_in_problem_ = cfg_.use_foot && frame.has_fk;
    feet_mode_locked_ = true;
    if (!ext_initialized_) {
      ext_cl_ = frame.state.base.ext_cl;
      ext_cr_ = frame.state.base.ext_cr;
      ext_initialized_ = true;
    }
  }
  frame.state.base.ext_cl = ext_cl_;
  frame.state.base.ext_cr = ext_cr_;
  const int idx = static_cast<int>(frames_.size());
  frames_.push_back(std::move(frame));

  for (const auto& o : obs) {
    auto [it, created] = tracks_.try_emplace(o.feature_id);
    FeatureTrack& t = it->second;
    if (created) {
      t.id = o.feature_id;
      t.host = idx;
      t.cluster_id = o.cluster_id.value_or(-1);
    }
    t.obs.push_back({idx, o.left, o.right});
  }
}

void WindowOptimizer::triangulate_pending() {
  for (auto& [id, track] : tracks_) {
    if (track.inv_depth > 0.0) continue;
    std::vector<Pose3> poses;
    std::vector<Vec2> uv;
    const auto* host_obs = track.obs_in(track.host);
    if (!host_obs) continue;
    const auto& hostf = frames_[track.host].state.base;
    poses.push_back(Pose3{hostf.R_w, hostf.p_w} * ext_cl_);
    uv.push_back(host_obs->left);
    for (const auto& o : track.obs) {
      const auto& fs = frames_[o.frame].state.base;
      if (o.frame != track.host) {
        poses.push_back(Pose3{fs.R_w, fs.p_w} * ext_cl_);
        uv.push_back(o.left);
      }
      if (o.right) {
        poses.push_back(Pose3{fs.R_w, fs.p_w} * ext_cr_);
        uv.push_back(*o.right);
      }
    }
    if (poses.size() < 2) continue;
    const auto lambda =
        triangulate_feature(poses, uv, cfg_.triangulation_min_parallax,
                            cfg_.min_depth, cfg_.max_depth);
    if (lambda) track.inv_depth = *lambda;
  }
}

WindowOptimizer::Layout WindowOptimizer::build_layout_() const {
  Layout lay;
  lay.with_feet = feet_in_problem_;
  lay.frame_dim = FrameBlocks::dim(feet_in_problem_);
  lay.num_frames = static_cast<int>(frames_.size());
  int off = lay.num_frames * lay.frame_dim;
  if (!cfg_.fix_extrinsics) {
    lay.ext_offset = off;
    off += 12;
  }
  for (const auto& [id, track] : tracks_) {
    if (!(track.inv_depth > 0.0)) continue;
    int n_res = 0;
    for (const auto& o : track.obs) {
      if (o.frame != track.host) ++n_res;
      if (o.right) ++n_res;
    }
    if (n_res < 1) continue;
    lay.feature_ids.push_back(id);
    lay.feature_col[id] = off++;
  }
  lay.total_dim = off;
  return lay;
}

double WindowOptimizer::evaluate(const std::vector<WindowFrame>& frames,
                                 const std::map<long, FeatureTrack>& tracks,
                                 const Pose3& ext_cl, const Pose3& ext_cr,
                                 std::map<std::string, double>* by_class,
                                 size_t* invalid) const {
  // A step that pushes any active inverse depth to or past zero is rejected
  // outright; untriangulated tracks sit at -1 and are skipped.
  for (const auto& [id, t] : tracks) {
    if (t.inv_depth > -0.5 && t.inv_depth < 1e-6)
      return std::numeric_limits<double>::infinity();
  }
  ProblemState st{&frames, &tracks, ext_cl, ext_cr};
  double total = 0.0;
  scan_factors(st, cfg_, feet_in_problem_, anchor_active_, anchor_target_, prior_,
               false, invalid, [&](FactorRows&& rows) {
                 total += rows.cost;
                 if (by_class) (*by_class)[rows.cls] += rows.cost;
               });
  return total;
}

void WindowOptimizer::linearize(const Layout& lay, MatX& H, VecX& g) const {
  H = MatX::Zero(lay.total_dim, lay.total_dim);
  g = VecX::Zero(lay.total_dim);
  ProblemState st{&frames_, &tracks_, ext_cl_, ext_cr_};
  scan_factors(
      st, cfg_, feet_in_problem_, anchor_active_, anchor_target_, prior_, true,
      nullptr, [&](FactorRows&& rows) {
        std::vector<std::pair<int, const MatX*>> cols;
        std::vector<MatX> feat_cols;
        for (const auto& [key, J] : rows.jac) cols.emplace_back(lay.col_of(key), &J);
        feat_cols.reserve(rows.jac_feature.size());
        for (const auto& [fid, J] : rows.jac_feature) {
          auto it = lay.feature_col.find(fid);
          if (it == lay.feature_col.end()) continue;
          feat_cols.push_back(J);
          cols.emplace_back(it->second, &feat_cols.back());
        }
        for (const auto& [ca, Ja] : cols) {
          g.segment(ca, Ja->cols()) += Ja->transpose() * rows.r;
          for (const auto& [cb, Jb] : cols) {
            H.block(ca, cb, Ja->cols(), Jb->cols()) += Ja->transpose() * (*Jb);
          }
        }
      });
}

void WindowOptimizer::apply_step(const Layout& lay, const VecX& delta,
                                 std::vector<WindowFrame>& frames,
                                 std::map<long, FeatureTrack>& tracks, Pose3& ext_cl,
                                 Pose3& ext_cr) const {
  for (int i = 0; i < lay.num_frames; ++i) {
    frames[i].state = frame_boxplus(
        frames[i].state, delta.segment(lay.frame_offset(i), lay.frame_dim),
        lay.with_feet);
  }
  if (lay.ext_offset >= 0) {
    const auto d = delta.segment<12>(lay.ext_offset);
    ext_cl.rotation = ext_cl.rotation * Rot3::exp(d.segment<3>(0));
    ext_cl.translation += d.segment<3>(3);
    ext_cr.rotation = ext_cr.rotation * Rot3::exp(d.segment<3>(6));
    ext_cr.translation += d.segment<3>(9);
  }
  for (auto& [id, track] : tracks) {
    auto it = lay.feature_col.find(id);
    if (it != lay.feature_col.end()) track.inv_depth += delta[it->second];
  }
  for (auto& f : frames) {
    f.state.base.ext_cl = ext_cl;
    f.state.base.ext_cr = ext_cr;
  }
}

SolveReport WindowOptimizer::solve() {
  SolveReport report;
  if (size() < 2) return report;

  const Layout lay = build_layout_();
  std::map<std::string, double> by_class;
  size_t invalid = 0;
  double cost = evaluate(frames_, tracks_, ext_cl_, ext_cr_, &by_class, &invalid);
  report.initial_cost = cost;
  for (const auto& [k, v] : by_class) report.cost_by_class["initial." + k] = v;

  MatX H;
  VecX g;
  linearize(lay, H, g);

  double lambda = cfg_.init_damping;
  int escalations = 0;
  int accepted = 0;
  while (accepted < cfg_.max_iterations) {
    MatX Hd = H;
    for (int k = 0; k < lay.total_dim; ++k)
      Hd(k, k) += lambda * std::max(H(k, k), 1e-8);
    const VecX delta = Hd.ldlt().solve(-g);
    if (!delta.allFinite()) {
      lambda *= 10.0;
      if (++escalations > cfg_.max_escalations) {
        report.ill_conditioned = true;
        break;
      }
      continue;
    }

    auto cand_frames = frames_;
    auto cand_tracks = tracks_;
    Pose3 cand_cl = ext_cl_, cand_cr = ext_cr_;
    apply_step(lay, delta, cand_frames, cand_tracks, cand_cl, cand_cr);
    const double cand_cost =
        evaluate(cand_frames, cand_tracks, cand_cl, cand_cr, nullptr, nullptr);

    if (cand_cost < cost) {
      frames_ = std::move(cand_frames);
      tracks_ = std::move(cand_tracks);
      ext_cl_ = cand_cl;
      ext_cr_ = cand_cr;
      ++accepted;
      ++report.iterations;
      const double decrease = cost - cand_cost;
      cost = cand_cost;
      lambda = std::max(lambda / 3.0, 1e-12);
      escalations = 0;
      if (decrease <= cfg_.rel_cost_decrease * std::max(cost, 1e-12)) {
        report.converged = true;
        break;
      }
      linearize(lay, H, g);
    } else {
      lambda *= 4.0;
      if (++escalations > cfg_.max_escalations) break;
    }
  }
  if (accepted >= cfg_.max_iterations) report.converged = true;

  by_class.clear();
  invalid = 0;
  report.final_cost = evaluate(frames_, tracks_, ext_cl_, ext_cr_, &by_class, &invalid);
  for (const auto& [k, v] : by_class) report.cost_by_class["final." + k] = v;
  report.invalid_projections = invalid;
  report.marginalized_dims = last_marginalized_dims_;
  return report;
}

WindowOptimizer::SlideDecision WindowOptimizer::keyframe_policy() const {
  if (size() < 2) return SlideDecision::kKeyframe;
  const int newest = size() - 1;
  const int prev = size() - 2;
  int tracked = 0;
  double parallax_sum = 0.0;
  int parallax_n = 0;
  for (const auto& [id, t] : tracks_) {
    const auto* on = t.obs_in(newest);
    if (!on) continue;
    if (t.obs.size() >= 2) ++tracked;
    const auto* op = t.obs_in(prev);
    if (!op) continue;
    parallax_sum += (on->left - op->left).norm();
    ++parallax_n;
  }
  const double mean_parallax = parallax_n ? parallax_sum / parallax_n : 0.0;
  if (mean_parallax > cfg_.keyframe_parallax || tracked < cfg_.keyframe_min_tracked)
    return SlideDecision::kKeyframe;
  return SlideDecision::kReplaceNewest;
}

namespace {

// Remove observations of `frame` from a track; true if the track should be
// erased outright.
bool strip_frame_obs(FeatureTrack& t, int frame) {
  t.obs.erase(std::remove_if(t.obs.begin(), t.obs.end(),
                             [&](const auto& o) { return o.frame == frame; }),
              t.obs.end());
  return t.obs.empty();
}

void shift_frame_indices(FeatureTrack& t, int removed) {
  for (auto& o : t.obs)
    if (o.frame > removed) --o.frame;
  if (t.host > removed) --t.host;
}

}  // namespace

bool WindowOptimizer::rehost_track_(FeatureTrack& track) {
  if (track.obs.empty()) return false;
  track.host = track.obs.front().frame;
  track.cluster_id = -1;  // clusters live in the old host keyframe
  std::vector<Pose3> poses;
  std::vector<Vec2> uv;
  const auto& hostf = frames_[track.host].state.base;
  poses.push_back(Pose3{hostf.R_w, hostf.p_w} * ext_cl_);
  uv.push_back(track.obs.front().left);
  for (const auto& o : track.obs) {
    const auto& fs = frames_[o.frame].state.base;
    if (o.frame != track.host) {
      poses.push_back(Pose3{fs.R_w, fs.p_w} * ext_cl_);
      uv.push_back(o.left);
    }
    if (o.right) {
      poses.push_back(Pose3{fs.R_w, fs.p_w} * ext_cr_);
      uv.push_back(*o.right);
    }
  }
  const auto lambda = triangulate_feature(
      poses, uv, cfg_.triangulation_min_parallax, cfg_.min_depth, cfg_.max_depth);
  if (!lambda) return false;
  track.inv_depth = *lambda;
  return true;
}

void WindowOptimizer::marginalize_oldest() {
  if (frames_.empty()) return;
  const Layout lay = build_layout_();

  // Re-host features that survive with two or more observations elsewhere;
  // their frame-0 information is discarded, not marginalized.
  std::vector<long> eliminate_ids;
  std::vector<long> erase_ids;
  for (auto& [id, t] : tracks_) {
    if (t.host != 0) continue;
    int surviving = 0;
    for (const auto& o : t.obs)
      if (o.frame != 0) ++surviving;
    if (surviving >= 2) {
      strip_frame_obs(t, 0);
      if (!rehost_track_(t)) erase_ids.push_back(id);
    } else if (t.inv_depth > 0.0 && lay.feature_col.count(id)) {
      eliminate_ids.push_back(id);
    } else {
      erase_ids.push_back(id);
    }
  }

  // Collect the factor stack: everything touching frame 0 or an eliminated
  // feature. The existing prior joins the stack whenever a new prior will
  // replace it.
  const VarKey dropped_frame{VarKey::kFrame, 0};
  std::vector<FactorRows> stack;
  FactorRows prior_rows;
  bool have_prior_rows = false;
  ProblemState st{&frames_, &tracks_, ext_cl_, ext_cr_};
  scan_factors(st, cfg_, feet_in_problem_, anchor_active_, anchor_target_, prior_,
               true, nullptr, [&](FactorRows&& rows) {
                 if (std::string(rows.cls) == "prior") {
                   prior_rows = std::move(rows);
                   have_prior_rows = true;
                   return;
                 }
                 bool take = rows.touches(dropped_frame);
                 for (long id : eliminate_ids)
                   if (!take && rows.touches_feature(id)) take = true;
                 if (take) stack.push_back(std::move(rows));
               });
  const bool prior_touches_dropped = have_prior_rows && prior_rows.touches(dropped_frame);
  const bool rebuild = !stack.empty() || prior_touches_dropped;
  if (rebuild && have_prior_rows) stack.push_back(std::move(prior_rows));

  std::optional<PriorFactor> new_prior;
  if (rebuild) {
    // Local layout: dropped block first.
    const int fd = lay.frame_dim;
    int dropped_dim = fd + static_cast<int>(eliminate_ids.size());
    std::map<long, int> elim_col;
    for (size_t i = 0; i < eliminate_ids.size(); ++i)
      elim_col[eliminate_ids[i]] = fd + static_cast<int>(i);

    std::vector<VarKey> kept;
    auto kept_col = [&](const VarKey& k) -> int {
      for (size_t i = 0; i < kept.size(); ++i)
        if (kept[i] == k) {
          int off = dropped_dim;
          for (size_t j = 0; j < i; ++j) off += lay.width_of(kept[j]);
          return off;
        }
      return -1;
    };
    for (const auto& rows : stack) {
      for (const auto& [key, J] : rows.jac) {
        if (key == dropped_frame) continue;
        if (std::find(kept.begin(), kept.end(), key) == kept.end()) kept.push_back(key);
      }
    }
    std::sort(kept.begin(), kept.end());
    int total = dropped_dim;
    for (const auto& k : kept) total += lay.width_of(k);

    MatX Hm = MatX::Zero(total, total);
    VecX gm = VecX::Zero(total);
    for (const auto& rows : stack) {
      std::vector<std::pair<int, const MatX*>> cols;
      std::vector<MatX> feat_cols;
      for (const auto& [key, J] : rows.jac) {
        const int c = (key == dropped_frame) ? 0 : kept_col(key);
        cols.emplace_back(c, &J);
      }
      for (const auto& [fid, J] : rows.jac_feature) {
        auto it = elim_col.find(fid);
        if (it == elim_col.end()) continue;  // info dropped with the obs
        feat_cols.push_back(J);
        cols.emplace_back(it->second, &feat_cols.back());
      }
      for (const auto& [ca, Ja] : cols) {
        gm.segment(ca, Ja->cols()) += Ja->transpose() * rows.r;
        for (const auto& [cb, Jb] : cols)
          Hm.block(ca, cb, Ja->cols(), Jb->cols()) += Ja->transpose() * (*Jb);
      }
    }

    auto [Hr, gr] = schur_eliminate(Hm, gm, dropped_dim);
    last_marginalized_dims_ = dropped_dim;

    if (Hr.rows() > 0) {
      Eigen::SelfAdjointEigenSolver<MatX> eig(Hr);
      VecX ev = eig.eigenvalues().cwiseMax(0.0);
      const double tol = std::max(1e-12 * ev.maxCoeff(), 1e-16);
      VecX sqrt_ev = VecX::Zero(ev.size());
      VecX inv_sqrt = VecX::Zero(ev.size());
      for (int i = 0; i < ev.size(); ++i) {
        if (ev[i] > tol) {
          sqrt_ev[i] = std::sqrt(ev[i]);
          inv_sqrt[i] = 1.0 / sqrt_ev[i];
        }
      }
      PriorFactor pf;
      pf.A = sqrt_ev.asDiagonal() * eig.eigenvectors().transpose();
      pf.r0 = inv_sqrt.asDiagonal() * (eig.eigenvectors().transpose() * gr);
      for (const auto& k : kept) {
        PriorFactor::Var var;
        if (k.type == VarKey::kFrame) {
          var.kind = PriorFactor::Var::kFrame;
          var.frame = k.frame;
          var.dim = lay.frame_dim;
          var.frame_lin = frames_[k.frame].state;
        } else {
          var.kind = PriorFactor::Var::kExtrinsics;
          var.dim = 12;
          var.ext_cl_lin = ext_cl_;
          var.ext_cr_lin = ext_cr_;
        }
        pf.vars.push_back(std::move(var));
      }
      new_prior = std::move(pf);
    }
  } else {
    // Nothing touches the oldest frame: identity marginalization.
    new_prior = prior_;
    last_marginalized_dims_ = 0;
  }

  for (long id : eliminate_ids) tracks_.erase(id);
  for (long id : erase_ids) tracks_.erase(id);
  for (auto it = tracks_.begin(); it != tracks_.end();) {
    strip_frame_obs(it->second, 0);
    if (it->second.obs.empty() || it->second.host == 0) {
      it = tracks_.erase(it);
    } else {
      shift_frame_indices(it->second, 0);
      ++it;
    }
  }
  frames_.erase(frames_.begin());
  anchor_active_ = false;

  prior_ = std::move(new_prior);
  if (prior_) {
    for (auto& v : prior_->vars)
      if (v.kind == PriorFactor::Var::kFrame) --v.frame;
  }
}

void WindowOptimizer::remove_second_newest(
    std::optional<ImuPreintegration> spliced_imu,
    std::array<std::optional<FootPreintegration>, kNumLegs> spliced_feet) {
  const int m = size() - 2;
  if (m < 0) return;

  // The prior may reference the removed frame; marginalize it out of the
  // prior's own normal equations.
  if (prior_) {
    int off = 0, m_off = -1, m_dim = 0;
    for (const auto& v : prior_->vars) {
      if (v.kind == PriorFactor::Var::kFrame && v.frame == m) {
        m_off = off;
        m_dim = v.dim;
      }
      off += v.dim;
    }
    if (m_off >= 0) {
      const int total = prior_->local_dim();
      // Permute the removed block to the front.
      std::vector<int> perm;
      for (int i = 0; i < m_dim; ++i) perm.push_back(m_off + i);
      for (int i = 0; i < total; ++i)
        if (i < m_off || i >= m_off + m_dim) perm.push_back(i);
      const MatX H = prior_->A.transpose() * prior_->A;
      const VecX g = prior_->A.transpose() * prior_->r0;
      MatX Hp(total, total);
      VecX gp(total);
      for (int i = 0; i < total; ++i) {
        gp[i] = g[perm[i]];
        for (int j = 0; j < total; ++j) Hp(i, j) = H(perm[i], perm[j]);
      }
      auto [Hr, gr] = schur_eliminate(Hp, gp, m_dim);

      std::vector<PriorFactor::Var> vars;
      for (const auto& v : prior_->vars)
        if (!(v.kind == PriorFactor::Var::kFrame && v.frame == m)) vars.push_back(v);
      if (Hr.rows() > 0 && !vars.empty()) {
        Eigen::SelfAdjointEigenSolver<MatX> eig(Hr);
        VecX ev = eig.eigenvalues().cwiseMax(0.0);
        const double tol = std::max(1e-12 * ev.maxCoeff(), 1e-16);
        VecX sqrt_ev = VecX::Zero(ev.size()), inv_sqrt = VecX::Zero(ev.size());
        for (int i = 0; i < ev.size(); ++i) {
          if (ev[i] > tol) {
            sqrt_ev[i] = std::sqrt(ev[i]);
            inv_sqrt[i] = 1.0 / sqrt_ev[i];
          }
        }
        PriorFactor pf;
        pf.A = sqrt_ev.asDiagonal() * eig.eigenvectors().transpose();
        pf.r0 = inv_sqrt.asDiagonal() * (eig.eigenvectors().transpose() * gr);
        pf.vars = std::move(vars);
        prior_ = std::move(pf);
      } else {
        prior_.reset();
      }
    }
  }

  // Features hosted at the removed frame move to their next observation.
  std::vector<long> erase_ids;
  for (auto& [id, t] : tracks_) {
    if (t.host == m) {
      strip_frame_obs(t, m);
      if (t.obs.empty() || !rehost_track_(t)) erase_ids.push_back(id);
    }
  }
  for (long id : erase_ids) tracks_.erase(id);
  for (auto it = tracks_.begin(); it != tracks_.end();) {
    strip_frame_obs(it->second, m);
    if (it->second.obs.empty()) {
      it = tracks_.erase(it);
    } else {
      shift_frame_indices(it->second, m);
      ++it;
    }
  }

  frames_.erase(frames_.begin() + m);
  frames_.back().imu_from_prev = std::move(spliced_imu);
  frames_.back().foot_from_prev = std::move(spliced_feet);
  if (prior_) {
    for (auto& v : prior_->vars)
      if (v.kind == PriorFactor::Var::kFrame && v.frame > m) --v.frame;
  }
}

std::optional<MatN<15, 15>> WindowOptimizer::newest_marginal_covariance() {
  if (size() < 1) return std::nullopt;
  const Layout lay = build_layout_();
  MatX H;
  VecX g;
  linearize(lay, H, g);
  H.diagonal().array() += 1e-10;
  Eigen::LDLT<MatX> ldlt(H);
  if (ldlt.info() != Eigen::Success) return std::nullopt;
  MatX rhs = MatX::Zero(lay.total_dim, 15);
  const int off = lay.frame_offset(lay.num_frames - 1);
  for (int i = 0; i < 15; ++i) rhs(off + i, i) = 1.0;
  const MatX cols = ldlt.solve(rhs);
  MatN<15, 15> cov = cols.middleRows<15>(off);
  cov = 0.5 * (cov + cov.transpose()).eval();
  if (!cov.allFinite()) return std::nullopt;
  return cov;
}

int WindowOptimizer::problem_dim() const { return build_layout_().total_dim; }

double WindowOptimizer::total_cost(std::map<std::string, double>* by_class) const {
  return evaluate(frames_, tracks_, ext_cl_, ext_cr_, by_class, nullptr);
}

std::pair<MatX, VecX> WindowOptimizer::normal_equations() const {
  const Layout lay = build_layout_();
  MatX H;
  VecX g;
  linearize(lay, H, g);
  return {H, g};
}

void WindowOptimizer::perturb(const VecX& delta) {
  const Layout lay = build_layout_();
  apply_step(lay, delta, frames_, tracks_, ext_cl_, ext_cr_);
}

SlidingWindow WindowOptimizer::snapshot() const {
  SlidingWindow w;
  w.capacity = cfg_.capacity;
  for (const auto& f : frames_) w.frames.push_back(f.state);
  for (const auto& [id, t] : tracks_) {
    if (t.inv_depth > 0.0) w.features[id] = {t.host, t.inv_depth};
  }
  return w;
}

}  // namespace lvik
