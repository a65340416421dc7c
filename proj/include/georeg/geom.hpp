#pragma once

#include "georeg/core.hpp"
#include "georeg/kdtree.hpp"

#include <Eigen/SVD>

#include <array>
#include <span>
#include <unordered_map>
#include <vector>

namespace georeg {

inline PointCloud apply_transform(const RigidTransform& T, const PointCloud& cloud) {
  validate(T);
  PointCloud out;
  out.points.reserve(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (!is_finite(cloud.points[i])) {
      throw Error(ErrorKind::InvalidInput, "non-finite point at index " + std::to_string(i));
    }
    out.points.push_back(T.apply(cloud.points[i]));
  }
  out.features = cloud.features;
  return out;
}

inline std::vector<Point3> apply_transform(const RigidTransform& T, std::span<const Point3> points) {
  std::vector<Point3> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(T.apply(p));
  return out;
}

using VoxelKey = std::array<std::int64_t, 3>;

inline VoxelKey voxel_key(const Point3& p, double voxel_size) {
  return {static_cast<std::int64_t>(std::floor(p.x() / voxel_size)),
          static_cast<std::int64_t>(std::floor(p.y() / voxel_size)),
          static_cast<std::int64_t>(std::floor(p.z() / voxel_size))};
}

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& k) const noexcept {
    std::uint64_t h = 1469598103934665603ULL;
    for (auto v : k) {
      h ^= static_cast<std::uint64_t>(v) + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2);
    }
    return static_cast<std::size_t>(h);
  }
};

/// Grid subsampling: one centroid per occupied voxel, emitted in order of the
/// first point that falls into each voxel. Features are averaged the same way.
inline PointCloud voxel_downsample(const PointCloud& cloud, double voxel_size) {
  if (!(voxel_size > 0.0) || !std::isfinite(voxel_size)) {
    throw Error(ErrorKind::Config, "voxel_size must be positive");
  }
  validate(cloud);
  std::unordered_map<VoxelKey, std::size_t, VoxelKeyHash> slot_of;
  std::vector<Eigen::Vector3d> sums;
  std::vector<std::size_t> counts;
  std::vector<std::size_t> slot_per_point(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto [it, inserted] = slot_of.try_emplace(voxel_key(cloud.points[i], voxel_size), sums.size());
    if (inserted) {
      sums.push_back(Eigen::Vector3d::Zero());
      counts.push_back(0);
    }
    sums[it->second] += cloud.points[i];
    ++counts[it->second];
    slot_per_point[i] = it->second;
  }
  PointCloud out;
  out.points.reserve(sums.size());
  for (std::size_t s = 0; s < sums.size(); ++s) out.points.push_back(sums[s] / static_cast<double>(counts[s]));
  if (cloud.features) {
    FeatureMatrix f = FeatureMatrix::Zero(static_cast<Eigen::Index>(sums.size()), cloud.features->cols());
    for (std::size_t i = 0; i < cloud.size(); ++i) f.row(slot_per_point[i]) += cloud.features->row(i);
    for (std::size_t s = 0; s < sums.size(); ++s) f.row(s) /= static_cast<double>(counts[s]);
    out.features = std::move(f);
  }
  return out;
}

/// Point-to-node grouping result. Superpoint indices refer to the pruned set
/// `kept_superpoints`, i.e. superpoint `s` is original superpoint `kept_superpoints[s]`.
struct PatchAssignment {
  std::vector<std::size_t> superpoint_of_point;
  std::vector<std::vector<std::size_t>> patches;
  std::vector<std::size_t> kept_superpoints;

  std::size_t num_patches() const noexcept { return patches.size(); }
};

/// Assigns every dense point to its nearest superpoint (lowest index on ties)
/// and drops superpoints whose patch ends up empty.
inline PatchAssignment point_to_node_grouping(const PointCloud& dense, const PointCloud& superpoints) {
  if (superpoints.empty()) throw Error(ErrorKind::InvalidInput, "superpoint set is empty");
  validate(dense);
  validate(superpoints);
  const KdTree tree(superpoints.points);
  std::vector<std::size_t> nearest(dense.size());
  std::vector<std::vector<std::size_t>> members(superpoints.size());
  for (std::size_t i = 0; i < dense.size(); ++i) {
    nearest[i] = tree.nearest(dense.points[i]).index;
    members[nearest[i]].push_back(i);
  }
  PatchAssignment out;
  std::vector<std::size_t> remap(superpoints.size(), std::numeric_limits<std::size_t>::max());
  for (std::size_t s = 0; s < superpoints.size(); ++s) {
    if (members[s].empty()) continue;
    remap[s] = out.kept_superpoints.size();
    out.kept_superpoints.push_back(s);
    out.patches.push_back(std::move(members[s]));
  }
  if (out.patches.empty()) throw Error(ErrorKind::NoPatches, "no patches: every superpoint has an empty patch");
  out.superpoint_of_point.resize(dense.size());
  for (std::size_t i = 0; i < dense.size(); ++i) out.superpoint_of_point[i] = remap[nearest[i]];
  return out;
}

/// Restricts a superpoint cloud to the superpoints that survived grouping.
inline PointCloud select_superpoints(const PointCloud& superpoints, const PatchAssignment& assignment) {
  PointCloud out;
  for (auto s : assignment.kept_superpoints) out.points.push_back(superpoints.points[s]);
  if (superpoints.features) {
    FeatureMatrix f(static_cast<Eigen::Index>(assignment.kept_superpoints.size()), superpoints.features->cols());
    for (std::size_t r = 0; r < assignment.kept_superpoints.size(); ++r) {
      f.row(static_cast<Eigen::Index>(r)) = superpoints.features->row(assignment.kept_superpoints[r]);
    }
    out.features = std::move(f);
  }
  return out;
}

/// Closed-form minimiser of sum_j w_j |R p_j + t - q_j|^2 with det(R) = +1.
inline RigidTransform weighted_svd_transform(std::span<const Point3> src, std::span<const Point3> dst,
                                             std::span<const double> weights) {
  if (src.size() != dst.size() || src.size() != weights.size()) {
    throw Error(ErrorKind::InvalidInput, "src, dst and weights must have equal length");
  }
  if (src.size() < 3) throw Error(ErrorKind::Degenerate, "fewer than 3 correspondences");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw Error(ErrorKind::InvalidInput, "weights must be finite and >= 0");
    total += w;
  }
  if (!(total > 0.0)) throw Error(ErrorKind::Degenerate, "total weight is zero");

  Eigen::Vector3d src_mean = Eigen::Vector3d::Zero();
  Eigen::Vector3d dst_mean = Eigen::Vector3d::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    src_mean += weights[i] * src[i];
    dst_mean += weights[i] * dst[i];
  }
  src_mean /= total;
  dst_mean /= total;

  Matrix3 cov = Matrix3::Zero();
  double spread = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const Eigen::Vector3d a = src[i] - src_mean;
    const Eigen::Vector3d b = dst[i] - dst_mean;
    cov += weights[i] * a * b.transpose();
    spread += weights[i] * (a.squaredNorm() + b.squaredNorm());
  }

  const Eigen::JacobiSVD<Matrix3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d sv = svd.singularValues();
  // Collinear or coincident correspondences leave fewer than two nonzero
  // singular values and the rotation about the line is unobservable.
  if (!(sv(0) > 1e-15 * spread) || sv(1) <= 1e-10 * sv(0)) {
    throw Error(ErrorKind::Degenerate, "cross-covariance rank < 2 (collinear or coincident points)");
  }
  const Matrix3 U = svd.matrixU();
  const Matrix3 V = svd.matrixV();
  Matrix3 D = Matrix3::Identity();
  D(2, 2) = (V * U.transpose()).determinant() < 0.0 ? -1.0 : 1.0;

  RigidTransform T;
  T.R = V * D * U.transpose();
  T.t = dst_mean - T.R * src_mean;
  return T;
}

inline double weighted_squared_residual(const RigidTransform& T, std::span<const Point3> src,
                                        std::span<const Point3> dst, std::span<const double> weights) {
  double sum = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) sum += weights[i] * (T.apply(src[i]) - dst[i]).squaredNorm();
  return sum;
}

}  // namespace georeg
