#pragma once

#include "georeg/config.hpp"
#include "georeg/io.hpp"
#include "georeg/metrics.hpp"
#include "georeg/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace georeg {

inline Json transform_to_json(const RigidTransform& T) {
  Json r = Json::array();
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 3; ++k) r.push_back(T.R(i, k));
  }
  return {{"R", r}, {"t", {T.t.x(), T.t.y(), T.t.z()}}};
}

inline RigidTransform transform_from_json(const Json& j, const std::string& where) {
  try {
    const auto& r = j.at("R");
    const auto& t = j.at("t");
    if (!r.is_array() || r.size() != 9 || !t.is_array() || t.size() != 3) {
      throw Error(ErrorKind::InvalidInput, where + ": R needs 9 values and t needs 3");
    }
    RigidTransform T;
    for (int i = 0; i < 9; ++i) T.R(i / 3, i % 3) = r[static_cast<std::size_t>(i)].get<double>();
    for (int i = 0; i < 3; ++i) T.t(i) = t[static_cast<std::size_t>(i)].get<double>();
    validate(T);
    return T;
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::InvalidInput, where + ": " + e.what());
  }
}

struct GroundTruthFile {
  RigidTransform transform;
  double overlap = 0.0;
};

inline void write_ground_truth(const std::filesystem::path& path, const RigidTransform& T, double overlap) {
  Json j = transform_to_json(T);
  j["overlap"] = overlap;
  save_json(path, j);
}

inline GroundTruthFile read_ground_truth(const std::filesystem::path& path) {
  const Json j = load_json(path);
  GroundTruthFile out;
  out.transform = transform_from_json(j, path.string());
  if (j.contains("overlap")) out.overlap = j["overlap"].get<double>();
  return out;
}

inline void write_correspondences_csv(const std::filesystem::path& path, const PointCorrespondences& c) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << "src_index,dst_index,confidence\n" << std::setprecision(17);
  for (const auto& m : c) out << m.src << ',' << m.dst << ',' << m.confidence << '\n';
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

inline PointCorrespondences read_correspondences_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "src_index,dst_index,confidence") {
    throw Error(ErrorKind::Io, path.string() + ": missing correspondence header");
  }
  PointCorrespondences out;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream fields(line);
    PointCorrespondence c{};
    if (!(fields >> c.src >> c.dst >> c.confidence)) {
      throw Error(ErrorKind::Io, path.string() + ": malformed row " + std::to_string(row));
    }
    out.push_back(c);
  }
  return out;
}

inline Json correspondences_to_json(const PointCorrespondences& c) {
  Json arr = Json::array();
  for (const auto& m : c) arr.push_back({{"src", m.src}, {"dst", m.dst}, {"confidence", m.confidence}});
  return arr;
}

/// Per-pair evaluation against ground truth.
struct PairEvaluation {
  double rre_deg = 0.0;
  double rte = 0.0;
  double rmse = 0.0;
  RatioResult inlier_ratio;
  RatioResult patch_inlier_ratio;
  bool registered = false;  // RRE and RTE under the thresholds
};

inline CorrespondencePoints ground_truth_points(const PointCloud& src, const PointCloud& dst, const RigidTransform& T,
                                                double tau) {
  const GroundTruthMatches gt = ground_truth_correspondences(src, dst, T, tau);
  CorrespondencePoints out;
  for (const auto& [x, y] : gt.pairs) {
    out.src.push_back(src.points[x]);
    out.dst.push_back(dst.points[y]);
  }
  return out;
}

inline PairEvaluation evaluate_pair(const PipelineOutput& model, const RegistrationResult& result,
                                    const RigidTransform& gt, const EvalThresholds& th) {
  PairEvaluation e;
  e.rre_deg = relative_rotation_error(result.transform.R, gt.R);
  e.rte = relative_translation_error(result.transform.t, gt.t);
  e.rmse = correspondence_rmse(result.transform,
                               ground_truth_points(model.dense_src, model.dense_dst, gt, th.matching_radius));
  e.inlier_ratio = inlier_ratio(model.correspondences, model.dense_src.points, model.dense_dst.points, gt,
                                th.inlier_distance);
  e.patch_inlier_ratio = patch_inlier_ratio(model.superpoint_matches, model.patches_src.patches,
                                            model.patches_dst.patches, model.dense_src.points,
                                            model.dense_dst.points, gt, th.matching_radius);
  e.registered = e.rre_deg < th.rre_limit_deg && e.rte < th.rte_limit;
  return e;
}

inline Json registration_report(const PipelineOutput& model, const RegistrationResult& r, Estimator estimator,
                                const RunConfig& cfg, bool timing) {
  Json j = transform_to_json(r.transform);
  j["estimator"] = to_string(estimator);
  j["inlier_count"] = r.inlier_count;
  j["candidate_count"] = r.candidate_count;
  j["refinement_rounds"] = r.refinement_rounds;
  j["low_confidence"] = r.low_confidence;
  if (estimator == Estimator::Ransac) j["ransac_iterations"] = cfg.ransac.iterations;
  j["counts"] = {
      {"src_points", model.dense_src.size()},
      {"dst_points", model.dense_dst.size()},
      {"src_superpoints", model.superpoints_src.size()},
      {"dst_superpoints", model.superpoints_dst.size()},
      {"superpoint_correspondences", model.superpoint_matches.size()},
      {"point_correspondences", model.correspondences.size()},
  };
  if (timing) {
    j["timings"] = {{"model_s", model.model_seconds},
                    {"pose_s", r.pose_seconds},
                    {"total_s", model.model_seconds + r.pose_seconds}};
  }
  return j;
}

inline Json evaluation_to_json(const PairEvaluation& e) {
  Json j = {{"rre_deg", e.rre_deg}, {"rte_m", e.rte}, {"rmse_m", e.rmse}, {"registered", e.registered}};
  j["inlier_ratio"] = e.inlier_ratio.value;
  j["patch_inlier_ratio"] = e.patch_inlier_ratio.value;
  if (e.inlier_ratio.empty) j["inlier_ratio_empty"] = true;
  if (e.patch_inlier_ratio.empty) j["patch_inlier_ratio_empty"] = true;
  return j;
}

}  // namespace georeg
