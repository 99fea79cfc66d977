#include "lvik/voxel_map.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cstdio>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace lvik {

PlaneModel fit_plane(const std::vector<Vec3>& points, double planarity_threshold,
                     int min_points) {
  if (points.size() < 3) throw std::invalid_argument("fit_plane: need >= 3 points");

  Vec3 centroid = Vec3::Zero();
  for (const auto& p : points) centroid += p;
  centroid /= static_cast<double>(points.size());

  Mat3 scatter = Mat3::Zero();
  for (const auto& p : points) {
    const Vec3 d = p - centroid;
    scatter += d * d.transpose();
  }
  scatter /= static_cast<double>(points.size());

  Eigen::SelfAdjointEigenSolver<Mat3> eig(scatter);
  const Vec3 evals = eig.eigenvalues();  // ascending
  Vec3 n = eig.eigenvectors().col(0);

  // Deterministic sign: positive z, then x, then y.
  if (n.z() < 0.0 || (n.z() == 0.0 && (n.x() < 0.0 || (n.x() == 0.0 && n.y() < 0.0))))
    n = -n;
  n.normalize();

  PlaneModel plane;
  plane.coeffs << n, -n.dot(centroid);
  double sq = 0.0;
  for (const auto& p : points) {
    const double d = plane.distance_to(p);
    sq += d * d;
  }
  plane.rms = std::sqrt(sq / static_cast<double>(points.size()));
  plane.valid = static_cast<int>(points.size()) >= min_points && evals[1] > 1e-12 &&
                evals[0] / evals[1] < planarity_threshold;
  return plane;
}

InsertionReport VoxelPlaneMap::insert_scan_serial(const std::vector<Vec3>& points) {
  InsertionReport rep;
  for (const auto& p : points) {
    auto [it, created] = voxels_.try_emplace(key_of(p));
    if (created) ++rep.new_voxels;
    Voxel& v = it->second;
    if (static_cast<int>(v.points.size()) >= cap_) {
      ++rep.rejected_full;
      continue;
    }
    v.points.push_back(p);
    v.dirty = true;
    ++rep.inserted;
  }
  return rep;
}

InsertionReport VoxelPlaneMap::insert_scan_parallel(const std::vector<Vec3>& points,
                                                    int workers) {
  InsertionReport rep;
  if (points.empty()) return rep;
  workers = std::max(1, workers);
  if (workers == 1) return insert_scan_serial(points);

  // Phase 1 (serial): create missing voxels so phase 2 never rehashes.
  std::vector<VoxelKey> keys(points.size());
  std::vector<Voxel*> slots(points.size());
  for (size_t i = 0; i < points.size(); ++i) {
    keys[i] = key_of(points[i]);
    auto [it, created] = voxels_.try_emplace(keys[i]);
    if (created) ++rep.new_voxels;
    slots[i] = &it->second;
  }

  // Phase 2: every voxel belongs to exactly one shard, each worker appends
  // its shard's points in global scan order.
  const VoxelKeyHash hasher;
  std::vector<size_t> inserted(workers, 0), rejected(workers, 0);
#ifdef _OPENMP
#pragma omp parallel for num_threads(workers) schedule(static, 1)
#endif
  for (int shard = 0; shard < workers; ++shard) {
    for (size_t i = 0; i < points.size(); ++i) {
      if (static_cast<int>(hasher(keys[i]) % workers) != shard) continue;
      Voxel& v = *slots[i];
      if (static_cast<int>(v.points.size()) >= cap_) {
        ++rejected[shard];
        continue;
      }
      v.points.push_back(points[i]);
      v.dirty = true;
      ++inserted[shard];
    }
  }
  for (int s = 0; s < workers; ++s) {
    rep.inserted += inserted[s];
    rep.rejected_full += rejected[s];
  }
  return rep;
}

void VoxelPlaneMap::fit_voxel(Voxel& v) const {
  if (static_cast<int>(v.points.size()) >= 3) {
    v.plane = fit_plane(v.points, planarity_, min_points_);
  } else {
    v.plane = PlaneModel{};
  }
  v.dirty = false;
}

void VoxelPlaneMap::refresh(int workers) {
  std::vector<Voxel*> dirty;
  for (auto& [k, v] : voxels_) {
    if (v.dirty) dirty.push_back(&v);
  }
#ifdef _OPENMP
#pragma omp parallel for num_threads(std::max(1, workers)) schedule(dynamic, 16)
#endif
  for (size_t i = 0; i < dirty.size(); ++i) fit_voxel(*dirty[i]);
}

std::optional<PlaneModel> VoxelPlaneMap::lookup(const Vec3& p, bool allow_refit) {
  const VoxelKey center = key_of(p);
  auto consider = [&](const VoxelKey& k) -> const PlaneModel* {
    auto it = voxels_.find(k);
    if (it == voxels_.end()) return nullptr;
    if (it->second.dirty && allow_refit) fit_voxel(it->second);
    return it->second.plane.valid && !it->second.dirty ? &it->second.plane : nullptr;
  };

  if (const PlaneModel* own = consider(center)) return *own;

  const PlaneModel* best = nullptr;
  double best_dist = 0.0;
  for (int dx = -1; dx <= 1; ++dx)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dz = -1; dz <= 1; ++dz) {
        if (dx == 0 && dy == 0 && dz == 0) continue;
        const PlaneModel* cand =
            consider({center.x + dx, center.y + dy, center.z + dz});
        if (!cand) continue;
        const double d = std::abs(cand->distance_to(p));
        if (!best || d < best_dist) {
          best = cand;
          best_dist = d;
        }
      }
  if (best) return *best;
  return std::nullopt;
}

std::optional<PlaneModel> VoxelPlaneMap::query_plane(const Vec3& p) {
  return lookup(p, true);
}

std::optional<PlaneModel> VoxelPlaneMap::query_plane(const Vec3& p) const {
  // Const path must not refit; dirty voxels are treated as invalid.
  return const_cast<VoxelPlaneMap*>(this)->lookup(p, false);
}

std::string VoxelPlaneMap::dump() const {
  std::vector<const decltype(voxels_)::value_type*> sorted;
  sorted.reserve(voxels_.size());
  for (const auto& kv : voxels_) sorted.push_back(&kv);
  std::sort(sorted.begin(), sorted.end(),
            [](const auto* a, const auto* b) { return a->first < b->first; });

  std::string out;
  char line[256];
  for (const auto* kv : sorted) {
    const auto& k = kv->first;
    const auto& v = kv->second;
    const auto& c = v.plane.coeffs;
    std::snprintf(line, sizeof(line), "%d %d %d %.17g %.17g %.17g %.17g %.17g %zu\n",
                  k.x, k.y, k.z, c[0], c[1], c[2], c[3], v.plane.rms,
                  v.points.size());
    out += line;
  }
  return out;
}

uint64_t fnv1a64(const std::string& data) {
  uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

uint64_t VoxelPlaneMap::digest() const { return fnv1a64(dump()); }

}  // namespace lvik
