#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "lvik/so3.hpp"

namespace lvik {

struct VoxelKey {
  int32_t x = 0, y = 0, z = 0;
  bool operator==(const VoxelKey&) const = default;
  bool operator<(const VoxelKey& o) const {
    if (x != o.x) return x < o.x;
    if (y != o.y) return y < o.y;
    return z < o.z;
  }
};

struct VoxelKeyHash {
  size_t operator()(const VoxelKey& k) const {
    // Large-prime mix, same spirit as the usual spatial hashes.
    uint64_t h = static_cast<uint32_t>(k.x) * 73856093ULL ^
                 static_cast<uint32_t>(k.y) * 19349669ULL ^
                 static_cast<uint32_t>(k.z) * 83492791ULL;
    return static_cast<size_t>(h);
  }
};

/// Homogeneous plane [n; -d] with unit normal: n^T p - d = signed distance.
struct PlaneModel {
  Vec4 coeffs = Vec4::Zero();
  double rms = 0.0;
  bool valid = false;

  Vec3 normal() const { return coeffs.head<3>(); }
  double distance_to(const Vec3& p) const { return coeffs.head<3>().dot(p) + coeffs[3]; }
};

/// PCA fit: normal = smallest-eigenvalue direction of the scatter matrix.
/// Valid needs >= 5 points and lambda_min/lambda_mid below the planarity
/// threshold. Normal sign: positive z, then x, then y.
PlaneModel fit_plane(const std::vector<Vec3>& points, double planarity_threshold = 0.1,
                     int min_points = 5);

struct Voxel {
  std::vector<Vec3> points;  // insertion order, capped
  PlaneModel plane;
  bool dirty = true;
};

struct InsertionReport {
  size_t inserted = 0;
  size_t rejected_full = 0;
  size_t new_voxels = 0;
};

/// Incremental voxel hash map with lazily refit per-voxel planes.
///
/// Insertion and queries are separate phases: parallel insertion uses
/// voxel-disjoint write sets, refresh() refits dirty planes, and read-only
/// queries may then run from any number of workers.
class VoxelPlaneMap {
 public:
  explicit VoxelPlaneMap(double voxel_size = 0.5, int cap = 50,
                         double planarity_threshold = 0.1, int min_points = 5)
      : voxel_size_(voxel_size), cap_(cap), planarity_(planarity_threshold),
        min_points_(min_points) {}

  VoxelKey key_of(const Vec3& p) const {
    return {static_cast<int32_t>(std::floor(p.x() / voxel_size_)),
            static_cast<int32_t>(std::floor(p.y() / voxel_size_)),
            static_cast<int32_t>(std::floor(p.z() / voxel_size_))};
  }

  /// Serial reference insertion; the parallel path must match it bit for bit.
  InsertionReport insert_scan_serial(const std::vector<Vec3>& points);

  /// Voxel-sharded insertion on up to `workers` OpenMP workers. Each voxel
  /// is owned by exactly one shard, so results are identical to the serial
  /// path for any worker count.
  InsertionReport insert_scan_parallel(const std::vector<Vec3>& points, int workers);

  /// Refit all dirty planes (parallelizable, called between epochs).
  void refresh(int workers = 1);

  /// Valid plane of p's voxel, else the 26-neighborhood plane with the
  /// smallest absolute distance to p. Lazily refits dirty voxels.
  std::optional<PlaneModel> query_plane(const Vec3& p);

  /// Read-only variant; dirty voxels are skipped (call refresh() first).
  std::optional<PlaneModel> query_plane(const Vec3& p) const;

  size_t size() const { return voxels_.size(); }
  bool empty() const { return voxels_.empty(); }
  const Voxel* voxel_at(const VoxelKey& k) const {
    auto it = voxels_.find(k);
    return it == voxels_.end() ? nullptr : &it->second;
  }

  /// Text dump `kx ky kz nx ny nz d rms npoints`, sorted by key.
  std::string dump() const;
  /// FNV-1a 64 hash of dump().
  uint64_t digest() const;

 private:
  void fit_voxel(Voxel& v) const;
  std::optional<PlaneModel> lookup(const Vec3& p, bool allow_refit);
  std::optional<PlaneModel> lookup_const(const Vec3& p) const;

  double voxel_size_;
  int cap_;
  double planarity_;
  int min_points_;
  std::unordered_map<VoxelKey, Voxel, VoxelKeyHash> voxels_;
};

uint64_t fnv1a64(const std::string& data);

}  // namespace lvik
