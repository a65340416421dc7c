#pragma once

#include "georeg/attention.hpp"
#include "georeg/core.hpp"
#include "georeg/embedding.hpp"
#include "georeg/geom.hpp"
#include "georeg/metrics.hpp"
#include "georeg/parallel.hpp"
#include "georeg/point_match.hpp"
#include "georeg/registration.hpp"
#include "georeg/superpoint_match.hpp"
#include "georeg/synth.hpp"

#include <chrono>
#include <string>
#include <vector>

namespace georeg {

struct AttentionConfig {
  int num_stages = 3;
  int heads = 4;
  int output_dim = 256;
  std::uint64_t seed = 1;
  std::string weights_path;  // random weights from `seed` when empty

  void validate() const {
    if (num_stages < 0) throw Error(ErrorKind::Config, "num_stages must be >= 0");
    if (heads < 1) throw Error(ErrorKind::Config, "heads must be >= 1");
    if (output_dim < 1) throw Error(ErrorKind::Config, "output_dim must be >= 1");
  }
};

enum class Estimator { Lgr, Ransac, Svd };

inline const char* to_string(Estimator e) {
  switch (e) {
    case Estimator::Lgr: return "lgr";
    case Estimator::Ransac: return "ransac";
    case Estimator::Svd: return "svd";
  }
  return "unknown";
}

inline Estimator parse_estimator(const std::string& name) {
  if (name == "lgr") return Estimator::Lgr;
  if (name == "ransac") return Estimator::Ransac;
  if (name == "svd") return Estimator::Svd;
  throw Error(ErrorKind::Config, "unknown estimator '" + name + "'");
}

struct RunConfig {
  std::uint64_t seed = 0;
  double dense_voxel = 0.025;
  double superpoint_voxel = 0.5;
  FeatureSpec features;
  EmbeddingConfig embedding;
  AttentionConfig attention;
  int num_correspondences = 256;
  PointMatchConfig point_matching;
  LgrConfig lgr;
  RansacConfig ransac;
  EvalThresholds evaluation;
  bool double_precision = false;

  void validate() const {
    if (!(dense_voxel > 0)) throw Error(ErrorKind::Config, "dense_voxel must be > 0");
    if (!(superpoint_voxel > 0)) throw Error(ErrorKind::Config, "superpoint_voxel must be > 0");
    features.validate();
    embedding.validate();
    attention.validate();
    if (embedding.d_t % attention.heads != 0) throw Error(ErrorKind::Config, "d_t must be divisible by heads");
    if (num_correspondences < 1) throw Error(ErrorKind::Config, "num_correspondences must be >= 1");
    point_matching.validate();
    lgr.validate();
    ransac.validate();
    evaluation.validate();
  }
};

/// Everything the pipeline produced for one pair; per_patch[i] belongs to
/// superpoint_matches[i].
struct PipelineOutput {
  PointCloud dense_src, dense_dst;
  PointCloud superpoints_src, superpoints_dst;
  PatchAssignment patches_src, patches_dst;
  SuperpointCorrespondences superpoint_matches;
  std::vector<PointCorrespondences> per_patch;
  PointCorrespondences correspondences;
  RegistrationResult result;
  Estimator estimator = Estimator::Lgr;
  double model_seconds = 0.0;
};

namespace detail {

template <typename Fn>
auto run_stage(const char* stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(stage, e);
  }
}

/// Mean of the member rows of each patch, minus the mean over all patches.
inline FeatureMatrix pool_patch_features(const FeatureMatrix& dense, const PatchAssignment& patches) {
  FeatureMatrix out = FeatureMatrix::Zero(static_cast<Eigen::Index>(patches.num_patches()), dense.cols());
  for (std::size_t s = 0; s < patches.num_patches(); ++s) {
    for (auto i : patches.patches[s]) out.row(static_cast<Eigen::Index>(s)) += dense.row(static_cast<Eigen::Index>(i));
    out.row(static_cast<Eigen::Index>(s)) /= static_cast<double>(patches.patches[s].size());
  }
  if (out.rows() > 0) out.rowwise() -= out.colwise().mean();
  return out;
}

template <typename Scalar>
StackOutput<Scalar> run_stack(const FeatureMatrix& f_p, const FeatureMatrix& f_q, const PointCloud& sp_p,
                              const PointCloud& sp_q, const RunConfig& cfg) {
  AttentionWeights<Scalar> w;
  if (cfg.attention.weights_path.empty()) {
    w = AttentionWeights<Scalar>::random(static_cast<int>(f_p.cols()), cfg.embedding.d_t, cfg.attention.output_dim,
                                         cfg.attention.heads, cfg.attention.num_stages, cfg.attention.seed);
  } else {
    w = load_weights<Scalar>(cfg.attention.weights_path);
  }
  const RowMatrix<Scalar> in_p = f_p.cast<Scalar>();
  const RowMatrix<Scalar> in_q = f_q.cast<Scalar>();
  return transformer_stack(in_p, in_q, sp_p, sp_q, w, cfg.embedding, cfg.attention.num_stages);
}

}  // namespace detail

/// Dense features for one cloud (handcrafted unless the cloud carries its own)
/// and superpoint features pooled from them over each patch.
struct CloudFeatures {
  FeatureMatrix dense;
  FeatureMatrix superpoint;
};

inline CloudFeatures compute_features(const PointCloud& dense, const PatchAssignment& patches,
                                      const FeatureSpec& spec) {
  CloudFeatures out;
  out.dense = dense.features ? *dense.features : handcrafted_features(dense, spec).features;
  out.superpoint = detail::pool_patch_features(out.dense, patches);
  return out;
}

/// Dense correspondences for every superpoint match, computed in parallel
/// and merged in match order.
inline std::vector<PointCorrespondences> match_all_patches(const SuperpointCorrespondences& matches,
                                                           const FeatureMatrix& f_p, const FeatureMatrix& f_q,
                                                           const PatchAssignment& patches_p,
                                                           const PatchAssignment& patches_q,
                                                           const PointMatchConfig& cfg) {
  cfg.validate();
  std::vector<PointCorrespondences> out(matches.size());
  parallel_for(matches.size(), [&](std::size_t i) {
    const auto& pp = patches_p.patches.at(matches[i].src);
    const auto& pq = patches_q.patches.at(matches[i].dst);
    FeatureMatrix a(static_cast<Eigen::Index>(pp.size()), f_p.cols());
    FeatureMatrix b(static_cast<Eigen::Index>(pq.size()), f_q.cols());
    for (std::size_t r = 0; r < pp.size(); ++r) a.row(static_cast<Eigen::Index>(r)) = f_p.row(static_cast<Eigen::Index>(pp[r]));
    for (std::size_t r = 0; r < pq.size(); ++r) b.row(static_cast<Eigen::Index>(r)) = f_q.row(static_cast<Eigen::Index>(pq[r]));
    out[i] = match_patch(a, b, pp, pq, cfg);
  });
  return out;
}

/// Pose estimation on the correspondences of a finished model pass.
inline RegistrationResult estimate_from(const PipelineOutput& model, Estimator estimator, const RunConfig& cfg) {
  return detail::run_stage("registration", [&] {
    const auto& ps = model.dense_src.points;
    const auto& qs = model.dense_dst.points;
    const auto start = std::chrono::steady_clock::now();
    RegistrationResult r;
    switch (estimator) {
      case Estimator::Lgr: r = local_to_global_registration(model.per_patch, model.correspondences, ps, qs, cfg.lgr); break;
      case Estimator::Ransac: r = ransac_registration(gather_matches(model.correspondences, ps, qs), cfg.ransac); break;
      case Estimator::Svd: r = svd_registration(gather_matches(model.correspondences, ps, qs), cfg.lgr.tau_a); break;
    }
    r.pose_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
  });
}

/// Runs the model part (everything up to dense correspondences) and then the
/// selected estimator. Stage failures are rethrown as StageError.
inline PipelineOutput register_pair(const PointCloud& src, const PointCloud& dst, const RunConfig& cfg,
                                    Estimator estimator = Estimator::Lgr) {
  cfg.validate();
  if (src.empty() || dst.empty()) throw StageError("input", Error(ErrorKind::InvalidInput, "clouds must be nonempty"));
  PipelineOutput out;
  out.estimator = estimator;
  const auto model_start = std::chrono::steady_clock::now();

  detail::run_stage("downsample", [&] {
    out.dense_src = voxel_downsample(src, cfg.dense_voxel);
    out.dense_dst = voxel_downsample(dst, cfg.dense_voxel);
    return 0;
  });
  detail::run_stage("grouping", [&] {
    const PointCloud nodes_p = voxel_downsample(PointCloud{out.dense_src.points, std::nullopt}, cfg.superpoint_voxel);
    const PointCloud nodes_q = voxel_downsample(PointCloud{out.dense_dst.points, std::nullopt}, cfg.superpoint_voxel);
    out.patches_src = point_to_node_grouping(out.dense_src, nodes_p);
    out.patches_dst = point_to_node_grouping(out.dense_dst, nodes_q);
    out.superpoints_src = select_superpoints(nodes_p, out.patches_src);
    out.superpoints_dst = select_superpoints(nodes_q, out.patches_dst);
    return 0;
  });
  const auto [feat_p, feat_q] = detail::run_stage("features", [&] {
    if (out.dense_src.has_features() != out.dense_dst.has_features()) {
      throw Error(ErrorKind::InvalidInput, "either both clouds or neither must carry features");
    }
    return std::pair{compute_features(out.dense_src, out.patches_src, cfg.features),
                     compute_features(out.dense_dst, out.patches_dst, cfg.features)};
  });
  const auto [h_p, h_q] = detail::run_stage("transformer", [&] {
    if (cfg.double_precision) {
      auto s = detail::run_stack<double>(feat_p.superpoint, feat_q.superpoint, out.superpoints_src,
                                         out.superpoints_dst, cfg);
      return std::pair<FeatureMatrix, FeatureMatrix>{std::move(s.h_p), std::move(s.h_q)};
    }
    auto s = detail::run_stack<float>(feat_p.superpoint, feat_q.superpoint, out.superpoints_src, out.superpoints_dst,
                                      cfg);
    return std::pair<FeatureMatrix, FeatureMatrix>{s.h_p.cast<double>(), s.h_q.cast<double>()};
  });
  out.superpoint_matches = detail::run_stage("superpoint_matching", [&] {
    return match_superpoints(h_p, h_q, static_cast<std::size_t>(cfg.num_correspondences));
  });
  out.per_patch = detail::run_stage("point_matching", [&] {
    return match_all_patches(out.superpoint_matches, feat_p.dense, feat_q.dense, out.patches_src, out.patches_dst,
                             cfg.point_matching);
  });
  out.correspondences = merge_correspondences(out.per_patch);
  out.model_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - model_start).count();

  out.result = estimate_from(out, estimator, cfg);
  return out;
}

}  // namespace georeg
