#pragma once

#include "georeg/core.hpp"
#include "georeg/geom.hpp"
#include "georeg/kdtree.hpp"
#include "georeg/point_match.hpp"
#include "georeg/superpoint_match.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace georeg {

struct EvalThresholds {
  double inlier_distance = 0.10;  // tau_1, meters
  double fmr_ratio = 0.05;        // tau_2
  double rmse_limit = 0.20;       // meters
  double rre_limit_deg = 5.0;
  double rte_limit = 2.0;         // meters
  double matching_radius = 0.05;  // tau, meters

  void validate() const {
    if (!(inlier_distance > 0 && fmr_ratio > 0 && rmse_limit > 0 && rre_limit_deg > 0 && rte_limit > 0 &&
          matching_radius > 0)) {
      throw Error(ErrorKind::Config, "evaluation thresholds must be positive");
    }
  }
};

/// A ratio that may be undefined on empty input; `empty` records that case.
struct RatioResult {
  double value = 0.0;
  bool empty = false;
};

/// Fraction of matches with |T_gt(p) - q| < tau_1.
inline RatioResult inlier_ratio(const PointCorrespondences& matches, std::span<const Point3> src,
                                std::span<const Point3> dst, const RigidTransform& gt, double tau1) {
  if (matches.empty()) return {0.0, true};
  std::size_t inliers = 0;
  for (const auto& c : matches) {
    if ((gt.apply(src[c.src]) - dst[c.dst]).norm() < tau1) ++inliers;
  }
  return {static_cast<double>(inliers) / static_cast<double>(matches.size()), false};
}

/// Fraction of pairs whose inlier ratio exceeds tau_2 (strictly).
inline double feature_matching_recall(std::span<const double> inlier_ratios, double tau2) {
  if (inlier_ratios.empty()) throw Error(ErrorKind::InvalidInput, "feature matching recall needs at least one pair");
  const auto hits = std::count_if(inlier_ratios.begin(), inlier_ratios.end(), [&](double r) { return r > tau2; });
  return static_cast<double>(hits) / static_cast<double>(inlier_ratios.size());
}

/// Ground-truth correspondence pairs as coordinates: src point and its true partner.
struct CorrespondencePoints {
  std::vector<Point3> src;
  std::vector<Point3> dst;
};

inline double correspondence_rmse(const RigidTransform& estimate, const CorrespondencePoints& gt) {
  if (gt.src.empty()) return std::numeric_limits<double>::infinity();
  double sum = 0.0;
  for (std::size_t i = 0; i < gt.src.size(); ++i) sum += (estimate.apply(gt.src[i]) - gt.dst[i]).squaredNorm();
  return std::sqrt(sum / static_cast<double>(gt.src.size()));
}

/// Fraction of pairs whose ground-truth correspondence RMSE is below the limit.
inline double registration_recall_rmse(std::span<const RigidTransform> estimates,
                                       std::span<const CorrespondencePoints> gt_correspondences, double rmse_limit) {
  if (estimates.size() != gt_correspondences.size()) throw Error(ErrorKind::InvalidInput, "list lengths differ");
  if (estimates.empty()) throw Error(ErrorKind::InvalidInput, "registration recall needs at least one pair");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < estimates.size(); ++i) {
    if (correspondence_rmse(estimates[i], gt_correspondences[i]) < rmse_limit) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(estimates.size());
}

/// Fraction of superpoint matches whose patches have some cross pair closer
/// than tau after moving the source patch by the ground-truth transform.
inline RatioResult patch_inlier_ratio(const SuperpointCorrespondences& matches,
                                      const std::vector<std::vector<std::size_t>>& patches_p,
                                      const std::vector<std::vector<std::size_t>>& patches_q,
                                      std::span<const Point3> dense_p, std::span<const Point3> dense_q,
                                      const RigidTransform& gt, double tau) {
  if (matches.empty()) return {0.0, true};
  std::size_t inliers = 0;
  std::vector<Point3> q_patch;
  for (const auto& m : matches) {
    q_patch.clear();
    for (auto y : patches_q.at(m.dst)) q_patch.push_back(dense_q[y]);
    const KdTree tree(q_patch);
    bool overlap = false;
    for (auto x : patches_p.at(m.src)) {
      const Neighbor nb = tree.nearest(gt.apply(dense_p[x]));
      if (nb.squared_distance < tau * tau) {
        overlap = true;
        break;
      }
    }
    if (overlap) ++inliers;
  }
  return {static_cast<double>(inliers) / static_cast<double>(matches.size()), false};
}

/// Geodesic rotation distance in degrees, arccos((trace(R^T R_gt) - 1) / 2).
inline double relative_rotation_error(const Matrix3& r_est, const Matrix3& r_gt) {
  const double c = std::clamp(((r_est.transpose() * r_gt).trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c) * kRadToDeg;
}

inline double relative_translation_error(const Eigen::Vector3d& t_est, const Eigen::Vector3d& t_gt) {
  return (t_est - t_gt).norm();
}

/// Fraction of pairs with RRE < limit and RTE < limit (both strict).
inline double registration_recall_threshold(std::span<const double> rres, std::span<const double> rtes,
                                            double rre_limit_deg, double rte_limit) {
  if (rres.size() != rtes.size()) throw Error(ErrorKind::InvalidInput, "list lengths differ");
  if (rres.empty()) throw Error(ErrorKind::InvalidInput, "registration recall needs at least one pair");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < rres.size(); ++i) {
    if (rres[i] < rre_limit_deg && rtes[i] < rte_limit) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(rres.size());
}

/// Mean RRE and RTE over the pairs flagged successful; zero when none are.
struct SuccessfulMeans {
  double rre_deg = 0.0;
  double rte = 0.0;
  std::size_t count = 0;
};

inline SuccessfulMeans mean_errors_over_successes(std::span<const double> rres, std::span<const double> rtes,
                                                  const std::vector<bool>& success) {
  if (rres.size() != rtes.size() || rres.size() != success.size()) {
    throw Error(ErrorKind::InvalidInput, "list lengths differ");
  }
  SuccessfulMeans out;
  for (std::size_t i = 0; i < rres.size(); ++i) {
    if (!success[i]) continue;
    out.rre_deg += rres[i];
    out.rte += rtes[i];
    ++out.count;
  }
  if (out.count > 0) {
    out.rre_deg /= static_cast<double>(out.count);
    out.rte /= static_cast<double>(out.count);
  }
  return out;
}

}  // namespace georeg
