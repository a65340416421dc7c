#pragma once

#include "georeg/core.hpp"
#include "georeg/geom.hpp"
#include "georeg/parallel.hpp"
#include "georeg/point_match.hpp"

#include <array>
#include <chrono>
#include <optional>
#include <span>
#include <vector>

namespace georeg {

struct LgrConfig {
  double tau_a = 0.10;  // meters
  int refinement_iterations = 5;
  int min_local_matches = 3;

  void validate() const {
    if (!(tau_a > 0.0) || !std::isfinite(tau_a)) throw Error(ErrorKind::Config, "tau_a must be > 0");
    if (refinement_iterations < 0) throw Error(ErrorKind::Config, "refinement_iterations must be >= 0");
    if (min_local_matches < 3) throw Error(ErrorKind::Config, "min_local_matches must be >= 3");
  }
};

struct RegistrationResult {
  RigidTransform transform;
  std::size_t inlier_count = 0;
  std::size_t candidate_count = 0;
  double pose_seconds = 0.0;
  int refinement_rounds = 0;  // rounds actually run
  bool low_confidence = false;
};

/// Correspondences resolved to coordinates with their confidences as weights.
struct MatchedPoints {
  std::vector<Point3> src;
  std::vector<Point3> dst;
  std::vector<double> weights;

  std::size_t size() const noexcept { return src.size(); }
};

inline MatchedPoints gather_matches(const PointCorrespondences& matches, std::span<const Point3> src,
                                    std::span<const Point3> dst) {
  MatchedPoints out;
  out.src.reserve(matches.size());
  out.dst.reserve(matches.size());
  out.weights.reserve(matches.size());
  for (const auto& c : matches) {
    if (c.src >= src.size() || c.dst >= dst.size()) throw Error(ErrorKind::InvalidInput, "correspondence index out of range");
    out.src.push_back(src[c.src]);
    out.dst.push_back(dst[c.dst]);
    out.weights.push_back(c.confidence);
  }
  return out;
}

/// Number of matches with |R p + t - q| < tau_a.
inline std::size_t count_inliers(const RigidTransform& T, const MatchedPoints& m, double tau_a) {
  const double limit = tau_a * tau_a;
  std::size_t count = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if ((T.apply(m.src[i]) - m.dst[i]).squaredNorm() < limit) ++count;
  }
  return count;
}

/// One weighted-SVD transform per patch with at least min_local_matches
/// matches; degenerate patches are skipped.
inline std::vector<RigidTransform> lgr_local_phase(std::span<const PointCorrespondences> per_patch,
                                                   std::span<const Point3> src, std::span<const Point3> dst,
                                                   const LgrConfig& cfg) {
  cfg.validate();
  std::vector<std::optional<RigidTransform>> slots(per_patch.size());
  parallel_for(per_patch.size(), [&](std::size_t i) {
    if (per_patch[i].size() < static_cast<std::size_t>(cfg.min_local_matches)) return;
    const MatchedPoints m = gather_matches(per_patch[i], src, dst);
    try {
      slots[i] = weighted_svd_transform(m.src, m.dst, m.weights);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Degenerate) throw;
    }
  });
  std::vector<RigidTransform> out;
  for (auto& s : slots) {
    if (s) out.push_back(*s);
  }
  if (out.empty()) throw Error(ErrorKind::NoCandidates, "no transformation candidates");
  return out;
}

struct GlobalSelection {
  std::size_t index = 0;
  std::size_t inlier_count = 0;
};

/// Candidate admitting the most inliers over all matches; ties go to the lower index.
inline GlobalSelection lgr_global_select(std::span<const RigidTransform> candidates, const MatchedPoints& m,
                                         double tau_a) {
  if (candidates.empty()) throw Error(ErrorKind::NoCandidates, "no transformation candidates");
  std::vector<std::size_t> counts(candidates.size());
  parallel_for(candidates.size(), [&](std::size_t i) { counts[i] = count_inliers(candidates[i], m, tau_a); });
  GlobalSelection best{0, counts[0]};
  for (std::size_t i = 1; i < counts.size(); ++i) {
    if (counts[i] > best.inlier_count) best = {i, counts[i]};
  }
  return best;
}

/// Re-solves the weighted SVD over the current inliers up to N_r times,
/// keeping the original confidences as weights.
inline RegistrationResult lgr_refine(const RigidTransform& initial, const MatchedPoints& m, const LgrConfig& cfg) {
  cfg.validate();
  validate(initial);
  const double limit = cfg.tau_a * cfg.tau_a;
  RegistrationResult out;
  out.transform = initial;
  std::vector<char> mask(m.size()), previous;
  auto select = [&](const RigidTransform& T) {
    std::size_t count = 0;
    for (std::size_t i = 0; i < m.size(); ++i) {
      mask[i] = (T.apply(m.src[i]) - m.dst[i]).squaredNorm() < limit;
      count += static_cast<std::size_t>(mask[i]);
    }
    return count;
  };
  out.inlier_count = select(initial);
  for (int round = 0; round < cfg.refinement_iterations; ++round) {
    if (out.inlier_count < 3) break;
    if (round > 0 && mask == previous) break;
    MatchedPoints inliers;
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (!mask[i]) continue;
      inliers.src.push_back(m.src[i]);
      inliers.dst.push_back(m.dst[i]);
      inliers.weights.push_back(m.weights[i]);
    }
    RigidTransform next;
    try {
      next = weighted_svd_transform(inliers.src, inliers.dst, inliers.weights);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Degenerate) throw;
      break;
    }
    previous = mask;
    const std::size_t count = select(next);
    if (count < 3) {
      mask = previous;
      break;
    }
    out.transform = next;
    out.inlier_count = count;
    ++out.refinement_rounds;
  }
  return out;
}

/// Local phase, global selection and refinement, timed together as pose time.
inline RegistrationResult local_to_global_registration(std::span<const PointCorrespondences> per_patch,
                                                       const PointCorrespondences& merged,
                                                       std::span<const Point3> src, std::span<const Point3> dst,
                                                       const LgrConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  const auto candidates = lgr_local_phase(per_patch, src, dst, cfg);
  const MatchedPoints m = gather_matches(merged, src, dst);
  const GlobalSelection best = lgr_global_select(candidates, m, cfg.tau_a);
  RegistrationResult out = lgr_refine(candidates[best.index], m, cfg);
  out.candidate_count = candidates.size();
  out.low_confidence = out.inlier_count < 3 * static_cast<std::size_t>(cfg.min_local_matches);
  out.pose_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

/// Weighted SVD over every match at once, no outlier handling.
inline RegistrationResult svd_registration(const MatchedPoints& m, double tau_a) {
  const auto start = std::chrono::steady_clock::now();
  RegistrationResult out;
  out.transform = weighted_svd_transform(m.src, m.dst, m.weights);
  out.inlier_count = count_inliers(out.transform, m, tau_a);
  out.candidate_count = 1;
  out.pose_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

struct RansacConfig {
  int iterations = 50000;
  double tau_a = 0.10;
  std::uint64_t seed = 0;

  void validate() const {
    if (iterations < 1) throw Error(ErrorKind::Config, "RANSAC needs at least one iteration");
    if (!(tau_a > 0.0) || !std::isfinite(tau_a)) throw Error(ErrorKind::Config, "tau_a must be > 0");
  }
};

/// True when the three points span a triangle of non-negligible area.
inline bool well_conditioned_sample(const Point3& a, const Point3& b, const Point3& c) {
  const Eigen::Vector3d u = b - a, v = c - a;
  const double scale = std::max(u.squaredNorm(), v.squaredNorm());
  return scale > 0.0 && u.cross(v).squaredNorm() > 1e-6 * scale * scale;
}

/// Three-point hypothesize-and-verify with a uniform-weight refit on the best
/// inlier set. All iterations run; streams are fixed per block of iterations
/// so the result does not depend on the thread count.
inline RegistrationResult ransac_registration(const MatchedPoints& m, const RansacConfig& cfg) {
  cfg.validate();
  if (m.size() < 3) throw Error(ErrorKind::InvalidInput, "RANSAC needs at least 3 correspondences");
  const auto start = std::chrono::steady_clock::now();
  constexpr std::size_t kBlock = 512;
  const auto total = static_cast<std::size_t>(cfg.iterations);
  const std::size_t blocks = (total + kBlock - 1) / kBlock;
  struct Best {
    std::size_t count = 0;
    std::size_t iteration = std::numeric_limits<std::size_t>::max();
    RigidTransform transform;
  };
  std::vector<Best> per_block(blocks);
  const double limit = cfg.tau_a * cfg.tau_a;
  const std::array<double, 3> unit{1.0, 1.0, 1.0};
  parallel_for(blocks, [&](std::size_t b) {
    Rng rng = Rng::derive(cfg.seed, b);
    Best& best = per_block[b];
    const std::size_t end = std::min(total, (b + 1) * kBlock);
    for (std::size_t it = b * kBlock; it < end; ++it) {
      const auto i = static_cast<std::size_t>(rng.below(m.size()));
      auto j = static_cast<std::size_t>(rng.below(m.size() - 1));
      if (j >= i) ++j;
      auto k = static_cast<std::size_t>(rng.below(m.size() - 2));
      if (k >= std::min(i, j)) ++k;
      if (k >= std::max(i, j)) ++k;
      if (!well_conditioned_sample(m.src[i], m.src[j], m.src[k]) ||
          !well_conditioned_sample(m.dst[i], m.dst[j], m.dst[k])) {
        continue;
      }
      const std::array<Point3, 3> s{m.src[i], m.src[j], m.src[k]};
      const std::array<Point3, 3> d{m.dst[i], m.dst[j], m.dst[k]};
      RigidTransform T;
      try {
        T = weighted_svd_transform(s, d, unit);
      } catch (const Error&) {
        continue;
      }
      std::size_t count = 0;
      for (std::size_t c = 0; c < m.size(); ++c) {
        if ((T.R * m.src[c] + T.t - m.dst[c]).squaredNorm() < limit) ++count;
      }
      if (count > best.count) best = {count, it, T};
    }
  });
  Best best;
  for (const auto& b : per_block) {
    if (b.count > best.count || (b.count == best.count && b.iteration < best.iteration)) best = b;
  }
  if (best.iteration == std::numeric_limits<std::size_t>::max()) {
    throw Error(ErrorKind::Degenerate, "every RANSAC sample was degenerate");
  }
  RegistrationResult out;
  out.transform = best.transform;
  out.candidate_count = total;
  if (best.count >= 3) {
    std::vector<Point3> s, d;
    for (std::size_t c = 0; c < m.size(); ++c) {
      if ((best.transform.apply(m.src[c]) - m.dst[c]).squaredNorm() < limit) {
        s.push_back(m.src[c]);
        d.push_back(m.dst[c]);
      }
    }
    const std::vector<double> w(s.size(), 1.0);
    try {
      out.transform = weighted_svd_transform(s, d, w);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Degenerate) throw;
    }
  }
  out.inlier_count = count_inliers(out.transform, m, cfg.tau_a);
  out.pose_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

}  // namespace georeg
