#pragma once

#include "georeg/core.hpp"
#include "georeg/geom.hpp"
#include "georeg/kdtree.hpp"
#include "georeg/losses.hpp"
#include "georeg/parallel.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <span>
#include <unordered_map>
#include <vector>

namespace georeg {

/// A room (floor and four walls) furnished with boxes and cylinders, sampled on
/// a jittered grid and cropped twice by horizontal discs. Both crops are
/// expressed relative to the source crop centre at half the room height.
struct SceneSpec {
  std::uint64_t seed = 0;
  double room_size = 6.0;    // meters, square footprint
  double room_height = 2.5;  // meters
  int num_boxes = 5;
  int num_cylinders = 4;
  double sample_spacing = 0.05;  // meters between grid samples
  double crop_radius = 2.0;      // meters
  double overlap = 0.6;          // target overlap in (0, 1]
  double noise_sigma = 0.003;    // meters, per axis
  double max_rotation_deg = 180.0;
  double max_translation = 1.0;  // meters, per axis
  double overlap_radius = 0.05;  // meters

  void validate() const {
    if (!(room_size > 0 && room_height > 0)) throw Error(ErrorKind::Config, "room dimensions must be > 0");
    if (num_boxes < 0 || num_cylinders < 0) throw Error(ErrorKind::Config, "primitive counts must be >= 0");
    if (!(sample_spacing > 0)) throw Error(ErrorKind::Config, "sample_spacing must be > 0");
    if (!(crop_radius > 0)) throw Error(ErrorKind::Config, "crop_radius must be > 0");
    if (!(overlap > 0.0 && overlap <= 1.0)) throw Error(ErrorKind::Config, "overlap must be in (0, 1]");
    if (!(noise_sigma >= 0)) throw Error(ErrorKind::Config, "noise_sigma must be >= 0");
    if (!(max_rotation_deg >= 0 && max_rotation_deg <= 180)) {
      throw Error(ErrorKind::Config, "max_rotation_deg must be in [0, 180]");
    }
    if (!(max_translation >= 0)) throw Error(ErrorKind::Config, "max_translation must be >= 0");
    if (!(overlap_radius > 0)) throw Error(ErrorKind::Config, "overlap_radius must be > 0");
  }
};

struct SyntheticPair {
  PointCloud src;
  PointCloud dst;
  RigidTransform transform;  // maps src onto dst
  double overlap = 0.0;
};

namespace detail {

[[gnu::noinline]] inline float round_to_float(double v) { return static_cast<float>(v); }

inline Point3 round_to_float(const Point3& p) {
  return {static_cast<double>(round_to_float(p.x())), static_cast<double>(round_to_float(p.y())),
          static_cast<double>(round_to_float(p.z()))};
}

/// Jittered grid over the parallelogram origin + a*e1 + b*e2, a, b in [0, 1].
inline void sample_rectangle(const Point3& origin, const Eigen::Vector3d& e1, const Eigen::Vector3d& e2,
                             double spacing, Rng& rng, std::vector<Point3>& out) {
  const auto n1 = std::max(1, static_cast<int>(std::ceil(e1.norm() / spacing)));
  const auto n2 = std::max(1, static_cast<int>(std::ceil(e2.norm() / spacing)));
  for (int a = 0; a < n1; ++a) {
    for (int b = 0; b < n2; ++b) {
      const double u = (a + 0.5 + rng.uniform(-0.3, 0.3)) / n1;
      const double v = (b + 0.5 + rng.uniform(-0.3, 0.3)) / n2;
      out.push_back(origin + u * e1 + v * e2);
    }
  }
}

inline void sample_box(const Point3& center, const Eigen::Vector3d& size, double yaw, double spacing, Rng& rng,
                       std::vector<Point3>& out) {
  const Matrix3 R = axis_angle(Eigen::Vector3d::UnitZ(), yaw);
  const Eigen::Vector3d ex = R.col(0) * size.x(), ey = R.col(1) * size.y(), ez = Eigen::Vector3d::UnitZ() * size.z();
  const Point3 corner = center - 0.5 * ex - 0.5 * ey;
  sample_rectangle(corner + ez, ex, ey, spacing, rng, out);
  sample_rectangle(corner, ex, ez, spacing, rng, out);
  sample_rectangle(corner + ey, ex, ez, spacing, rng, out);
  sample_rectangle(corner, ey, ez, spacing, rng, out);
  sample_rectangle(corner + ex, ey, ez, spacing, rng, out);
}

inline void sample_cylinder(const Point3& base, double radius, double height, double spacing, Rng& rng,
                            std::vector<Point3>& out) {
  const double circumference = 2.0 * std::numbers::pi * radius;
  const auto na = std::max(6, static_cast<int>(std::ceil(circumference / spacing)));
  const auto nh = std::max(1, static_cast<int>(std::ceil(height / spacing)));
  for (int a = 0; a < na; ++a) {
    for (int h = 0; h < nh; ++h) {
      const double theta = 2.0 * std::numbers::pi * (a + 0.5 + rng.uniform(-0.3, 0.3)) / na;
      const double z = height * (h + 0.5 + rng.uniform(-0.3, 0.3)) / nh;
      out.push_back(base + Eigen::Vector3d(radius * std::cos(theta), radius * std::sin(theta), z));
    }
  }
  std::vector<Point3> cap;
  sample_rectangle(base + Eigen::Vector3d(-radius, -radius, height), Eigen::Vector3d(2 * radius, 0, 0),
                   Eigen::Vector3d(0, 2 * radius, 0), spacing, rng, cap);
  for (const auto& p : cap) {
    if ((p - base).head<2>().norm() < radius) out.push_back(p);
  }
}

/// Fraction of `a` with a point of `b` closer than radius.
inline double coverage(std::span<const Point3> a, std::span<const Point3> b, double radius) {
  if (a.empty()) return 0.0;
  if (b.empty()) return 0.0;
  const KdTree tree(b);
  std::size_t covered = 0;
  for (const auto& p : a) {
    if (tree.nearest(p).squared_distance < radius * radius) ++covered;
  }
  return static_cast<double>(covered) / static_cast<double>(a.size());
}

}  // namespace detail

/// Surface samples of the furnished room, deterministic in the seed.
inline std::vector<Point3> generate_room_samples(const SceneSpec& spec) {
  spec.validate();
  Rng layout = Rng::derive(spec.seed, 1);
  Rng jitter = Rng::derive(spec.seed, 2);
  const double w = spec.room_size, h = spec.room_height, s = spec.sample_spacing;
  std::vector<Point3> out;
  detail::sample_rectangle({0, 0, 0}, {w, 0, 0}, {0, w, 0}, s, jitter, out);
  detail::sample_rectangle({0, 0, 0}, {w, 0, 0}, {0, 0, h}, s, jitter, out);
  detail::sample_rectangle({0, w, 0}, {w, 0, 0}, {0, 0, h}, s, jitter, out);
  detail::sample_rectangle({0, 0, 0}, {0, w, 0}, {0, 0, h}, s, jitter, out);
  detail::sample_rectangle({w, 0, 0}, {0, w, 0}, {0, 0, h}, s, jitter, out);
  const double margin = std::min(0.6, 0.25 * w);
  for (int b = 0; b < spec.num_boxes; ++b) {
    const Point3 c(layout.uniform(margin, w - margin), layout.uniform(margin, w - margin), 0.0);
    const Eigen::Vector3d size(layout.uniform(0.3, 1.2), layout.uniform(0.3, 1.2), layout.uniform(0.3, std::min(1.5, h)));
    detail::sample_box(c, size, layout.uniform(0.0, std::numbers::pi), s, jitter, out);
  }
  for (int c = 0; c < spec.num_cylinders; ++c) {
    const Point3 base(layout.uniform(margin, w - margin), layout.uniform(margin, w - margin), 0.0);
    const double radius = layout.uniform(0.1, 0.35);
    const double height = layout.uniform(0.4, std::min(2.0, h));
    detail::sample_cylinder(base, radius, height, s, jitter, out);
  }
  return out;
}

/// min of the two mutual coverages of clouds already in a common frame.
inline double mutual_overlap(std::span<const Point3> a, std::span<const Point3> b, double radius) {
  return std::min(detail::coverage(a, b, radius), detail::coverage(b, a, radius));
}

/// Overlap of a registered pair: dst is compared with T(src).
inline double measured_overlap(const PointCloud& src, const PointCloud& dst, const RigidTransform& T, double radius) {
  const PointCloud moved = apply_transform(T, src);
  return mutual_overlap(moved.points, dst.points, radius);
}

inline SyntheticPair generate_scene(const SceneSpec& spec) {
  spec.validate();
  const std::vector<Point3> samples = generate_room_samples(spec);
  Rng noise_rng = Rng::derive(spec.seed, 3);
  std::vector<Eigen::Vector3d> noise_p(samples.size()), noise_q(samples.size());
  for (auto& n : noise_p) n = Eigen::Vector3d(noise_rng.normal(), noise_rng.normal(), noise_rng.normal()) * spec.noise_sigma;
  for (auto& n : noise_q) n = Eigen::Vector3d(noise_rng.normal(), noise_rng.normal(), noise_rng.normal()) * spec.noise_sigma;

  Rng crop_rng = Rng::derive(spec.seed, 4);
  const double w = spec.room_size;
  const double inset = std::min(0.5 * spec.crop_radius, 0.5 * w);
  const Eigen::Vector2d c_p(crop_rng.uniform(inset, w - inset), crop_rng.uniform(inset, w - inset));
  const double heading = crop_rng.uniform(0.0, 2.0 * std::numbers::pi);
  const Eigen::Vector2d dir(std::cos(heading), std::sin(heading));

  auto crop = [&](const Eigen::Vector2d& centre, const std::vector<Eigen::Vector3d>& noise) {
    std::vector<Point3> out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if ((samples[i].head<2>() - centre).norm() < spec.crop_radius) out.push_back(samples[i] + noise[i]);
    }
    return out;
  };
  const std::vector<Point3> src_local = crop(c_p, noise_p);
  if (src_local.size() < 3) throw Error(ErrorKind::Config, "source crop contains fewer than 3 points");
  auto overlap_at = [&](double d) { return mutual_overlap(src_local, crop(c_p + d * dir, noise_q), spec.overlap_radius); };

  double best_d = 0.0;
  double best_overlap = overlap_at(0.0);
  double lo = 0.0, hi = 2.0 * spec.crop_radius;
  if (best_overlap > spec.overlap) {
    for (int it = 0; it < 40; ++it) {
      const double mid = 0.5 * (lo + hi);
      const double o = overlap_at(mid);
      if (std::abs(o - spec.overlap) < std::abs(best_overlap - spec.overlap)) {
        best_d = mid;
        best_overlap = o;
      }
      (o > spec.overlap ? lo : hi) = mid;
    }
  }
  if (std::abs(best_overlap - spec.overlap) > 0.05) {
    throw Error(ErrorKind::Config, "overlap target " + std::to_string(spec.overlap) + " unreachable; closest " +
                                       std::to_string(best_overlap));
  }

  Rng pose_rng = Rng::derive(spec.seed, 5);
  SyntheticPair out;
  out.transform = random_transform(pose_rng, spec.max_rotation_deg * kDegToRad, spec.max_translation);
  const Point3 origin(c_p.x(), c_p.y(), 0.5 * spec.room_height);
  for (const auto& p : src_local) out.src.points.push_back(detail::round_to_float(Point3(p - origin)));
  for (const auto& q : crop(c_p + best_d * dir, noise_q)) {
    out.dst.points.push_back(detail::round_to_float(out.transform.apply(q - origin)));
  }
  out.overlap = measured_overlap(out.src, out.dst, out.transform, spec.overlap_radius);
  return out;
}

/// Rigid-invariant local descriptor: a spin image (radial distance from and
/// height along an oriented normal) concatenated with covariance statistics of
/// the normal neighbourhood.
struct FeatureSpec {
  double radius = 1.5;         // meters, spin image support
  double normal_radius = 0.2;  // meters, neighbourhood for the normal and statistics
  int radial_bins = 24;
  int height_bins = 10;
  double stats_weight = 0.3;  // relative weight of the covariance statistics
  double scale = 30.0;        // overall feature norm

  int dim() const { return radial_bins * height_bins + 18; }

  void validate() const {
    if (!(radius > 0)) throw Error(ErrorKind::Config, "feature radius must be > 0");
    if (!(normal_radius > 0)) throw Error(ErrorKind::Config, "feature normal_radius must be > 0");
    if (radial_bins < 1 || height_bins < 1) throw Error(ErrorKind::Config, "feature bin counts must be >= 1");
    if (!(stats_weight >= 0)) throw Error(ErrorKind::Config, "feature stats_weight must be >= 0");
    if (!(scale > 0)) throw Error(ErrorKind::Config, "feature scale must be > 0");
  }
};

inline constexpr int kShellBins = 4;
inline constexpr int kStatsPerScale = 3 + 2 + kShellBins;
inline constexpr int kLocalStatsDim = 2 * kStatsPerScale;

struct FeatureResult {
  FeatureMatrix features;
  std::size_t isolated = 0;  // query points with no neighbour besides themselves
};

namespace detail {

inline Matrix3 covariance(std::span<const Point3> cloud, const std::vector<std::size_t>& nbrs, Eigen::Vector3d& mean) {
  mean = Eigen::Vector3d::Zero();
  for (auto i : nbrs) mean += cloud[i];
  mean /= static_cast<double>(nbrs.size());
  Matrix3 cov = Matrix3::Zero();
  for (auto i : nbrs) {
    const Eigen::Vector3d d = cloud[i] - mean;
    cov += d * d.transpose();
  }
  return cov / static_cast<double>(nbrs.size());
}

/// Local statistics at one scale: sqrt eigenvalues of the covariance, centroid
/// offset norm, offset along the normal, and radial shell fractions; all
/// normalised by the radius.
inline void local_stats(const Point3& centre, std::span<const Point3> cloud, const std::vector<std::size_t>& nbrs,
                        double radius, double* out) {
  std::fill(out, out + kStatsPerScale, 0.0);
  if (nbrs.empty()) return;
  Eigen::Vector3d mean;
  const Eigen::SelfAdjointEigenSolver<Matrix3> eig(covariance(cloud, nbrs, mean));
  const Eigen::Vector3d ev = eig.eigenvalues().cwiseMax(0.0);
  out[0] = 2.0 * std::sqrt(ev(2)) / radius;
  out[1] = 2.0 * std::sqrt(ev(1)) / radius;
  out[2] = 2.0 * std::sqrt(ev(0)) / radius;
  const Eigen::Vector3d offset = mean - centre;
  out[3] = offset.norm() / radius;
  out[4] = std::abs(offset.dot(eig.eigenvectors().col(0))) / radius;
  for (auto i : nbrs) {
    const double r = (cloud[i] - centre).norm() / radius;
    const int bin = std::min(kShellBins - 1, static_cast<int>(r * kShellBins));
    out[5 + bin] += 1.0;
  }
  for (int b = 0; b < kShellBins; ++b) out[5 + b] /= static_cast<double>(nbrs.size());
}

inline std::vector<std::size_t> within(std::span<const Point3> cloud, const std::vector<std::size_t>& candidates,
                                       const Point3& centre, double radius) {
  std::vector<std::size_t> out;
  for (auto j : candidates) {
    if ((cloud[j] - centre).squaredNorm() <= radius * radius) out.push_back(j);
  }
  return out;
}

/// Unit-norm spin image with bilinear binning. The normal is the smallest
/// covariance axis within normal_radius, flipped so the mean height of the
/// support is non-negative. Heights span [-radius, radius].
inline void spin_image(const Point3& centre, std::span<const Point3> cloud, const std::vector<std::size_t>& normal_nbrs,
                       const std::vector<std::size_t>& support, const FeatureSpec& spec, double* out) {
  const int na = spec.radial_bins, nb = spec.height_bins;
  std::fill(out, out + na * nb, 0.0);
  if (normal_nbrs.empty() || support.empty()) return;
  Eigen::Vector3d mean;
  const Eigen::SelfAdjointEigenSolver<Matrix3> eig(covariance(cloud, normal_nbrs, mean));
  Eigen::Vector3d n = eig.eigenvectors().col(0);
  double height_sum = 0.0;
  for (auto i : support) height_sum += (cloud[i] - centre).dot(n);
  if (height_sum < 0.0) n = -n;
  const double sa = na / spec.radius, sb = nb / (2.0 * spec.radius);
  for (auto i : support) {
    const Eigen::Vector3d d = cloud[i] - centre;
    const double h = d.dot(n);
    const double a = std::sqrt(std::max(0.0, d.squaredNorm() - h * h));
    const double fa = a * sa - 0.5;
    const double fb = (h + spec.radius) * sb - 0.5;
    const int ia = static_cast<int>(std::floor(fa));
    const int ib = static_cast<int>(std::floor(fb));
    const double wa = fa - ia, wb = fb - ib;
    for (int x = 0; x < 2; ++x) {
      for (int y = 0; y < 2; ++y) {
        const int ca = ia + x, cb = ib + y;
        if (ca < 0 || ca >= na || cb < 0 || cb >= nb) continue;
        out[ca * nb + cb] += (x ? wa : 1.0 - wa) * (y ? wb : 1.0 - wb);
      }
    }
  }
  double norm = 0.0;
  for (int k = 0; k < na * nb; ++k) norm += out[k] * out[k];
  norm = std::sqrt(norm);
  if (norm > 0.0) {
    for (int k = 0; k < na * nb; ++k) out[k] /= norm;
  }
}

}  // namespace detail

/// Raw statistics at radius and radius/2 for every query centre over `support`.
inline FeatureMatrix local_statistics(std::span<const Point3> centres, std::span<const Point3> support, double radius,
                                      std::size_t* isolated = nullptr) {
  const KdTree tree(support);
  FeatureMatrix stats(static_cast<Eigen::Index>(centres.size()), kLocalStatsDim);
  std::vector<std::size_t> isolated_flag(centres.size(), 0);
  parallel_for(centres.size(), [&](std::size_t i) {
    double* row = stats.data() + static_cast<Eigen::Index>(i) * kLocalStatsDim;
    const auto outer = tree.radius(centres[i], radius);
    std::size_t others = 0;
    for (auto j : outer) others += (support[j] - centres[i]).squaredNorm() > 0.0;
    isolated_flag[i] = others == 0;
    detail::local_stats(centres[i], support, outer, radius, row);
    const auto inner = tree.radius(centres[i], 0.5 * radius);
    detail::local_stats(centres[i], support, inner, 0.5 * radius, row + kStatsPerScale);
  });
  if (isolated) {
    *isolated = 0;
    for (auto f : isolated_flag) *isolated += f;
  }
  return stats;
}

/// Descriptors for arbitrary centres over a support cloud:
/// scale * [spin image, stats_weight * statistics at normal_radius and half of it].
inline FeatureResult handcrafted_features_at(std::span<const Point3> centres, std::span<const Point3> support,
                                             const FeatureSpec& spec) {
  spec.validate();
  FeatureResult out;
  const int spin_dim = spec.radial_bins * spec.height_bins;
  out.features.resize(static_cast<Eigen::Index>(centres.size()), spec.dim());
  const KdTree tree(support);
  std::vector<char> isolated(centres.size(), 0);
  parallel_for(centres.size(), [&](std::size_t i) {
    const Point3& c = centres[i];
    const auto outer = tree.radius_unordered(c, spec.radius);
    const double rn = spec.normal_radius;
    const auto normal = rn > spec.radius ? tree.radius_unordered(c, rn) : detail::within(support, outer, c, rn);
    const auto inner = detail::within(support, normal, c, 0.5 * rn);
    std::size_t others = 0;
    for (auto j : outer) others += (support[j] - c).squaredNorm() > 0.0;
    isolated[i] = others == 0;
    double* row = out.features.data() + static_cast<Eigen::Index>(i) * spec.dim();
    detail::spin_image(c, support, normal, outer, spec, row);
    double* stats = row + spin_dim;
    detail::local_stats(c, support, normal, rn, stats);
    detail::local_stats(c, support, inner, 0.5 * rn, stats + kStatsPerScale);
    for (int k = 0; k < kLocalStatsDim; ++k) stats[k] *= spec.stats_weight;
  });
  for (auto f : isolated) out.isolated += static_cast<std::size_t>(f);
  out.features *= spec.scale;
  return out;
}

/// Descriptors for every point of a cloud over its own neighbourhoods.
inline FeatureResult handcrafted_features(const PointCloud& cloud, const FeatureSpec& spec) {
  validate(cloud);
  return handcrafted_features_at(cloud.points, cloud.points, spec);
}

struct GroundTruthMatches {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // ascending by src
  std::vector<std::size_t> unmatched_src;
  std::vector<std::size_t> unmatched_dst;
};

/// (x, y) is a match when y is the nearest target of T(p_x), x is the nearest
/// moved source of q_y and their distance is below tau.
inline GroundTruthMatches ground_truth_correspondences(const PointCloud& src, const PointCloud& dst,
                                                       const RigidTransform& T, double tau) {
  if (!(tau > 0)) throw Error(ErrorKind::Config, "matching radius must be > 0");
  GroundTruthMatches out;
  std::vector<char> src_hit(src.size(), 0), dst_hit(dst.size(), 0);
  if (!src.empty() && !dst.empty()) {
    const PointCloud moved = apply_transform(T, src);
    const KdTree dst_tree(dst.points);
    const KdTree src_tree(moved.points);
    for (std::size_t x = 0; x < moved.size(); ++x) {
      const Neighbor y = dst_tree.nearest(moved.points[x]);
      if (!(y.squared_distance < tau * tau)) continue;
      if (src_tree.nearest(dst.points[y.index]).index != x) continue;
      out.pairs.emplace_back(x, y.index);
      src_hit[x] = 1;
      dst_hit[y.index] = 1;
    }
  }
  for (std::size_t x = 0; x < src.size(); ++x) {
    if (!src_hit[x]) out.unmatched_src.push_back(x);
  }
  for (std::size_t y = 0; y < dst.size(); ++y) {
    if (!dst_hit[y]) out.unmatched_dst.push_back(y);
  }
  return out;
}

/// Patch overlap ratios from point-level ground truth: overlap_p(i, j) is the
/// share of P-patch i whose matched partner lies in Q-patch j.
inline OverlapLabels patch_overlap_labels(const GroundTruthMatches& gt, const PatchAssignment& patches_p,
                                          const PatchAssignment& patches_q) {
  const auto np = static_cast<Eigen::Index>(patches_p.num_patches());
  const auto nq = static_cast<Eigen::Index>(patches_q.num_patches());
  MatrixXd counts = MatrixXd::Zero(np, nq);
  for (const auto& [x, y] : gt.pairs) {
    counts(static_cast<Eigen::Index>(patches_p.superpoint_of_point.at(x)),
           static_cast<Eigen::Index>(patches_q.superpoint_of_point.at(y))) += 1.0;
  }
  OverlapLabels out;
  out.overlap_p = counts;
  out.overlap_q = counts.transpose();
  for (Eigen::Index i = 0; i < np; ++i) out.overlap_p.row(i) /= static_cast<double>(patches_p.patches[static_cast<std::size_t>(i)].size());
  for (Eigen::Index j = 0; j < nq; ++j) out.overlap_q.row(j) /= static_cast<double>(patches_q.patches[static_cast<std::size_t>(j)].size());
  return out;
}

/// Point-level labels for one patch pair in patch-local indices.
inline PatchMatchLabels patch_match_labels(const GroundTruthMatches& gt, std::span<const std::size_t> patch_p,
                                           std::span<const std::size_t> patch_q) {
  std::unordered_map<std::size_t, Eigen::Index> local_q;
  for (std::size_t j = 0; j < patch_q.size(); ++j) local_q.emplace(patch_q[j], static_cast<Eigen::Index>(j));
  std::unordered_map<std::size_t, std::size_t> partner;
  for (const auto& [x, y] : gt.pairs) partner.emplace(x, y);
  PatchMatchLabels out;
  std::vector<char> dst_used(patch_q.size(), 0);
  for (std::size_t i = 0; i < patch_p.size(); ++i) {
    const auto it = partner.find(patch_p[i]);
    const auto jt = it == partner.end() ? local_q.end() : local_q.find(it->second);
    if (jt == local_q.end()) {
      out.unmatched_src.push_back(static_cast<Eigen::Index>(i));
      continue;
    }
    out.matches.emplace_back(static_cast<Eigen::Index>(i), jt->second);
    dst_used[static_cast<std::size_t>(jt->second)] = 1;
  }
  for (std::size_t j = 0; j < patch_q.size(); ++j) {
    if (!dst_used[j]) out.unmatched_dst.push_back(static_cast<Eigen::Index>(j));
  }
  return out;
}

}  // namespace georeg
