#pragma once

#include "georeg/pipeline.hpp"
#include "georeg/synth.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <string>

namespace georeg {

using Json = nlohmann::json;

namespace detail {

inline void require_object(const Json& j, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorKind::Config, where + " must be a JSON object");
}

/// Rejects keys outside `allowed`, naming the offending path.
inline void reject_unknown_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  require_object(j, where);
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || key == a;
    if (!known) throw Error(ErrorKind::Config, "unknown key '" + where + "." + key + "'");
  }
}

template <typename T>
void read_key(const Json& j, const char* key, T& out, const std::string& where) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) throw Error(ErrorKind::Config, "");
    } else if constexpr (std::is_integral_v<T>) {
      if (!it->is_number_integer()) throw Error(ErrorKind::Config, "");
      if constexpr (std::is_unsigned_v<T>) {
        if (it->is_number_integer() && !it->is_number_unsigned() && it->template get<long long>() < 0) {
          throw Error(ErrorKind::Config, "");
        }
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!it->is_number()) throw Error(ErrorKind::Config, "");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!it->is_string()) throw Error(ErrorKind::Config, "");
    }
    out = it->template get<T>();
  } catch (const std::exception&) {
    throw Error(ErrorKind::Config, "key '" + where + "." + key + "' has the wrong type");
  }
}

inline const Json* child(const Json& j, const char* key) {
  const auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

inline void read_feature_spec(const Json& j, FeatureSpec& f, const std::string& where) {
  reject_unknown_keys(j, {"radius_m", "normal_radius_m", "radial_bins", "height_bins", "stats_weight", "scale"}, where);
  read_key(j, "radius_m", f.radius, where);
  read_key(j, "normal_radius_m", f.normal_radius, where);
  read_key(j, "radial_bins", f.radial_bins, where);
  read_key(j, "height_bins", f.height_bins, where);
  read_key(j, "stats_weight", f.stats_weight, where);
  read_key(j, "scale", f.scale, where);
  f.validate();
}

inline Json feature_spec_json(const FeatureSpec& f) {
  return {{"radius_m", f.radius},       {"normal_radius_m", f.normal_radius}, {"radial_bins", f.radial_bins},
          {"height_bins", f.height_bins}, {"stats_weight", f.stats_weight},     {"scale", f.scale}};
}

}  // namespace detail

/// Strict parse: every key is optional, unknown keys are errors.
inline RunConfig run_config_from_json(const Json& j) {
  using detail::child;
  using detail::read_key;
  RunConfig c;
  detail::reject_unknown_keys(j,
                              {"seed", "dense_voxel_m", "superpoint_voxel_m", "features", "embedding", "attention",
                               "superpoint_matching", "point_matching", "lgr", "ransac", "evaluation", "precision"},
                              "config");
  read_key(j, "seed", c.seed, "config");
  read_key(j, "dense_voxel_m", c.dense_voxel, "config");
  read_key(j, "superpoint_voxel_m", c.superpoint_voxel, "config");
  if (const Json* f = child(j, "features")) detail::read_feature_spec(*f, c.features, "config.features");
  if (const Json* e = child(j, "embedding")) {
    const std::string w = "config.embedding";
    detail::reject_unknown_keys(*e, {"d_t", "sigma_d_m", "sigma_a_deg", "k_angular"}, w);
    read_key(*e, "d_t", c.embedding.d_t, w);
    read_key(*e, "sigma_d_m", c.embedding.sigma_d, w);
    double sigma_a_deg = c.embedding.sigma_a * kRadToDeg;
    read_key(*e, "sigma_a_deg", sigma_a_deg, w);
    c.embedding.sigma_a = sigma_a_deg * kDegToRad;
    read_key(*e, "k_angular", c.embedding.k, w);
  }
  if (const Json* a = child(j, "attention")) {
    const std::string w = "config.attention";
    detail::reject_unknown_keys(*a, {"num_stages", "heads", "output_dim", "seed", "weights"}, w);
    read_key(*a, "num_stages", c.attention.num_stages, w);
    read_key(*a, "heads", c.attention.heads, w);
    read_key(*a, "output_dim", c.attention.output_dim, w);
    read_key(*a, "seed", c.attention.seed, w);
    read_key(*a, "weights", c.attention.weights_path, w);
  }
  if (const Json* s = child(j, "superpoint_matching")) {
    detail::reject_unknown_keys(*s, {"num_correspondences"}, "config.superpoint_matching");
    read_key(*s, "num_correspondences", c.num_correspondences, "config.superpoint_matching");
  }
  if (const Json* p = child(j, "point_matching")) {
    const std::string w = "config.point_matching";
    detail::reject_unknown_keys(*p, {"sinkhorn_iterations", "dustbin_alpha", "mutual_k", "min_confidence"}, w);
    read_key(*p, "sinkhorn_iterations", c.point_matching.sinkhorn_iterations, w);
    read_key(*p, "dustbin_alpha", c.point_matching.dustbin_alpha, w);
    read_key(*p, "mutual_k", c.point_matching.mutual_k, w);
    read_key(*p, "min_confidence", c.point_matching.min_confidence, w);
  }
  if (const Json* l = child(j, "lgr")) {
    const std::string w = "config.lgr";
    detail::reject_unknown_keys(*l, {"tau_a_m", "refinement_iterations", "min_local_matches"}, w);
    read_key(*l, "tau_a_m", c.lgr.tau_a, w);
    read_key(*l, "refinement_iterations", c.lgr.refinement_iterations, w);
    read_key(*l, "min_local_matches", c.lgr.min_local_matches, w);
  }
  if (const Json* r = child(j, "ransac")) {
    const std::string w = "config.ransac";
    detail::reject_unknown_keys(*r, {"iterations", "tau_a_m", "seed"}, w);
    read_key(*r, "iterations", c.ransac.iterations, w);
    read_key(*r, "tau_a_m", c.ransac.tau_a, w);
    read_key(*r, "seed", c.ransac.seed, w);
  }
  if (const Json* e = child(j, "evaluation")) {
    const std::string w = "config.evaluation";
    detail::reject_unknown_keys(
        *e, {"tau1_m", "tau2", "rmse_limit_m", "rre_limit_deg", "rte_limit_m", "matching_radius_m"}, w);
    read_key(*e, "tau1_m", c.evaluation.inlier_distance, w);
    read_key(*e, "tau2", c.evaluation.fmr_ratio, w);
    read_key(*e, "rmse_limit_m", c.evaluation.rmse_limit, w);
    read_key(*e, "rre_limit_deg", c.evaluation.rre_limit_deg, w);
    read_key(*e, "rte_limit_m", c.evaluation.rte_limit, w);
    read_key(*e, "matching_radius_m", c.evaluation.matching_radius, w);
  }
  std::string precision = c.double_precision ? "double" : "float";
  read_key(j, "precision", precision, "config");
  if (precision != "float" && precision != "double") {
    throw Error(ErrorKind::Config, "config.precision must be \"float\" or \"double\"");
  }
  c.double_precision = precision == "double";
  c.validate();
  return c;
}

inline Json run_config_to_json(const RunConfig& c) {
  return {
      {"seed", c.seed},
      {"dense_voxel_m", c.dense_voxel},
      {"superpoint_voxel_m", c.superpoint_voxel},
      {"features", detail::feature_spec_json(c.features)},
      {"embedding",
       {{"d_t", c.embedding.d_t},
        {"sigma_d_m", c.embedding.sigma_d},
        {"sigma_a_deg", c.embedding.sigma_a * kRadToDeg},
        {"k_angular", c.embedding.k}}},
      {"attention",
       {{"num_stages", c.attention.num_stages},
        {"heads", c.attention.heads},
        {"output_dim", c.attention.output_dim},
        {"seed", c.attention.seed},
        {"weights", c.attention.weights_path}}},
      {"superpoint_matching", {{"num_correspondences", c.num_correspondences}}},
      {"point_matching",
       {{"sinkhorn_iterations", c.point_matching.sinkhorn_iterations},
        {"dustbin_alpha", c.point_matching.dustbin_alpha},
        {"mutual_k", c.point_matching.mutual_k},
        {"min_confidence", c.point_matching.min_confidence}}},
      {"lgr",
       {{"tau_a_m", c.lgr.tau_a},
        {"refinement_iterations", c.lgr.refinement_iterations},
        {"min_local_matches", c.lgr.min_local_matches}}},
      {"ransac", {{"iterations", c.ransac.iterations}, {"tau_a_m", c.ransac.tau_a}, {"seed", c.ransac.seed}}},
      {"evaluation",
       {{"tau1_m", c.evaluation.inlier_distance},
        {"tau2", c.evaluation.fmr_ratio},
        {"rmse_limit_m", c.evaluation.rmse_limit},
        {"rre_limit_deg", c.evaluation.rre_limit_deg},
        {"rte_limit_m", c.evaluation.rte_limit},
        {"matching_radius_m", c.evaluation.matching_radius}}},
      {"precision", c.double_precision ? "double" : "float"},
  };
}

struct SynthJob {
  SceneSpec scene;
  bool write_features = false;
  FeatureSpec features;
};

inline SynthJob synth_job_from_json(const Json& j) {
  using detail::read_key;
  const std::string w = "spec";
  detail::reject_unknown_keys(j,
                              {"seed", "room_size_m", "room_height_m", "num_boxes", "num_cylinders",
                               "sample_spacing_m", "crop_radius_m", "overlap", "noise_sigma_m", "max_rotation_deg",
                               "max_translation_m", "overlap_radius_m", "write_features", "features"},
                              w);
  SynthJob job;
  SceneSpec& s = job.scene;
  read_key(j, "seed", s.seed, w);
  read_key(j, "room_size_m", s.room_size, w);
  read_key(j, "room_height_m", s.room_height, w);
  read_key(j, "num_boxes", s.num_boxes, w);
  read_key(j, "num_cylinders", s.num_cylinders, w);
  read_key(j, "sample_spacing_m", s.sample_spacing, w);
  read_key(j, "crop_radius_m", s.crop_radius, w);
  read_key(j, "overlap", s.overlap, w);
  read_key(j, "noise_sigma_m", s.noise_sigma, w);
  read_key(j, "max_rotation_deg", s.max_rotation_deg, w);
  read_key(j, "max_translation_m", s.max_translation, w);
  read_key(j, "overlap_radius_m", s.overlap_radius, w);
  read_key(j, "write_features", job.write_features, w);
  if (const Json* f = detail::child(j, "features")) detail::read_feature_spec(*f, job.features, "spec.features");
  s.validate();
  job.features.validate();
  return job;
}

inline Json load_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorKind::Io, path.string() + ": " + e.what());
  }
}

inline void save_json(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

}  // namespace georeg
