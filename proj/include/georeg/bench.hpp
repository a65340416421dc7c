#pragma once

#include "georeg/config.hpp"
#include "georeg/io.hpp"
#include "georeg/metrics.hpp"
#include "georeg/pipeline.hpp"
#include "georeg/report.hpp"

#include <algorithm>
#include <array>
#include <filesystem>
#include <string>
#include <vector>

namespace georeg {

/// Reads a PLY and attaches the `.feat` sidecar next to it when present.
inline PointCloud load_cloud(const std::filesystem::path& path) {
  PointCloud cloud = read_ply(path);
  std::filesystem::path sidecar = path;
  sidecar.replace_extension(".feat");
  if (std::filesystem::exists(sidecar)) {
    FeatureMatrix f = read_feature_sidecar(sidecar);
    if (static_cast<std::size_t>(f.rows()) != cloud.size()) {
      throw Error(ErrorKind::Io, sidecar.string() + ": row count does not match " + path.string());
    }
    cloud.features = std::move(f);
  }
  return cloud;
}

/// Writes src.ply, dst.ply and gt.json (plus feature sidecars on request).
inline void write_pair(const std::filesystem::path& dir, const SyntheticPair& pair, const SynthJob& job) {
  std::filesystem::create_directories(dir);
  write_ply(dir / "src.ply", pair.src);
  write_ply(dir / "dst.ply", pair.dst);
  write_ground_truth(dir / "gt.json", pair.transform, pair.overlap);
  if (job.write_features) {
    write_feature_sidecar(dir / "src.feat", handcrafted_features(pair.src, job.features).features);
    write_feature_sidecar(dir / "dst.feat", handcrafted_features(pair.dst, job.features).features);
  }
}

/// Scene directories under `root` that contain gt.json, sorted by name; `root`
/// itself when it holds a pair.
inline std::vector<std::filesystem::path> list_scene_dirs(const std::filesystem::path& root) {
  if (!std::filesystem::is_directory(root)) throw Error(ErrorKind::Io, root.string() + " is not a directory");
  if (std::filesystem::exists(root / "gt.json")) return {root};
  std::vector<std::filesystem::path> out;
  for (const auto& entry : std::filesystem::directory_iterator(root)) {
    if (entry.is_directory() && std::filesystem::exists(entry.path() / "gt.json")) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw Error(ErrorKind::Io, "no scene pairs under " + root.string());
  return out;
}

inline constexpr std::array<Estimator, 3> kBenchEstimators{Estimator::Lgr, Estimator::Ransac, Estimator::Svd};

struct BenchPair {
  std::string id;
  double overlap = 0.0;
  double model_seconds = 0.0;
  std::array<RegistrationResult, 3> results;
  std::array<PairEvaluation, 3> evaluations;
  std::array<bool, 3> failed{};
  std::string failure;
};

/// Runs the shared model pass and all estimators on one pair. A pipeline
/// failure marks every estimator failed for the pair.
inline BenchPair bench_pair(const std::filesystem::path& dir, const RunConfig& cfg) {
  BenchPair out;
  out.id = dir.filename().string();
  const GroundTruthFile gt = read_ground_truth(dir / "gt.json");
  out.overlap = gt.overlap;
  const PointCloud src = load_cloud(dir / "src.ply");
  const PointCloud dst = load_cloud(dir / "dst.ply");
  PipelineOutput model;
  try {
    model = register_pair(src, dst, cfg, Estimator::Lgr);
  } catch (const Error& e) {
    out.failed.fill(true);
    out.failure = e.what();
    return out;
  }
  out.model_seconds = model.model_seconds;
  for (std::size_t k = 0; k < kBenchEstimators.size(); ++k) {
    try {
      out.results[k] = k == 0 ? model.result : estimate_from(model, kBenchEstimators[k], cfg);
    } catch (const Error& e) {
      out.failed[k] = true;
      if (out.failure.empty()) out.failure = e.what();
      continue;
    }
    out.evaluations[k] = evaluate_pair(model, out.results[k], gt.transform, cfg.evaluation);
  }
  return out;
}

inline Json bench_report(const std::vector<BenchPair>& pairs, const RunConfig& cfg, bool timing) {
  Json per_pair = Json::array();
  for (const auto& p : pairs) {
    Json jp = {{"id", p.id}, {"overlap", p.overlap}};
    if (!p.failure.empty()) jp["failure"] = p.failure;
    Json est = Json::object();
    for (std::size_t k = 0; k < kBenchEstimators.size(); ++k) {
      if (p.failed[k]) {
        est[to_string(kBenchEstimators[k])] = {{"failed", true}};
        continue;
      }
      Json je = evaluation_to_json(p.evaluations[k]);
      je["transform"] = transform_to_json(p.results[k].transform);
      je["inlier_count"] = p.results[k].inlier_count;
      je["low_confidence"] = p.results[k].low_confidence;
      if (timing) je["pose_s"] = p.results[k].pose_seconds;
      est[to_string(kBenchEstimators[k])] = je;
    }
    jp["estimators"] = est;
    if (timing) jp["model_s"] = p.model_seconds;
    per_pair.push_back(jp);
  }

  Json aggregate = Json::object();
  for (std::size_t k = 0; k < kBenchEstimators.size(); ++k) {
    std::vector<double> irs, pirs, rres, rtes, pose;
    std::vector<bool> registered;
    std::size_t rmse_hits = 0;
    for (const auto& p : pairs) {
      if (p.failed[k]) {
        irs.push_back(0.0);
        pirs.push_back(0.0);
        rres.push_back(180.0);
        rtes.push_back(std::numeric_limits<double>::infinity());
        registered.push_back(false);
        continue;
      }
      const auto& e = p.evaluations[k];
      irs.push_back(e.inlier_ratio.value);
      pirs.push_back(e.patch_inlier_ratio.value);
      rres.push_back(e.rre_deg);
      rtes.push_back(e.rte);
      registered.push_back(e.registered);
      pose.push_back(p.results[k].pose_seconds);
      if (e.rmse < cfg.evaluation.rmse_limit) ++rmse_hits;
    }
    const SuccessfulMeans means = mean_errors_over_successes(rres, rtes, registered);
    auto mean = [](const std::vector<double>& v) {
      double s = 0.0;
      for (double x : v) s += x;
      return v.empty() ? 0.0 : s / static_cast<double>(v.size());
    };
    Json ja = {
        {"pairs", pairs.size()},
        {"feature_matching_recall", feature_matching_recall(irs, cfg.evaluation.fmr_ratio)},
        {"mean_inlier_ratio", mean(irs)},
        {"mean_patch_inlier_ratio", mean(pirs)},
        {"registration_recall_rmse", static_cast<double>(rmse_hits) / static_cast<double>(pairs.size())},
        {"registration_recall", registration_recall_threshold(rres, rtes, cfg.evaluation.rre_limit_deg,
                                                              cfg.evaluation.rte_limit)},
        {"registered_pairs", means.count},
        {"mean_rre_deg_registered", means.rre_deg},
        {"mean_rte_m_registered", means.rte},
    };
    if (timing) ja["mean_pose_s"] = mean(pose);
    aggregate[to_string(kBenchEstimators[k])] = ja;
  }
  Json report = {{"pairs", per_pair}, {"aggregate", aggregate}, {"config", run_config_to_json(cfg)}};
  if (timing) {
    double model = 0.0, lgr = 0.0, ransac = 0.0;
    for (const auto& p : pairs) {
      model += p.model_seconds;
      lgr += p.results[0].pose_seconds;
      ransac += p.results[1].pose_seconds;
    }
    report["timings"] = {{"model_s", model},
                         {"lgr_pose_s", lgr},
                         {"ransac_pose_s", ransac},
                         {"ransac_over_lgr_pose", lgr > 0.0 ? ransac / lgr : 0.0}};
  }
  return report;
}

inline Json run_bench(const std::filesystem::path& scenes, const RunConfig& cfg, bool timing) {
  std::vector<BenchPair> pairs;
  for (const auto& dir : list_scene_dirs(scenes)) pairs.push_back(bench_pair(dir, cfg));
  return bench_report(pairs, cfg, timing);
}

}  // namespace georeg
