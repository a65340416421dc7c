#include "georeg/georeg.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

namespace fs = std::filesystem;
using namespace georeg;

namespace {

constexpr int kOk = 0;
constexpr int kPipelineFailure = 1;
constexpr int kUsage = 2;

/// I/O and configuration problems are usage errors; anything else raised by a
/// pipeline stage is a pipeline failure.
int exit_code_for(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::Io:
    case ErrorKind::Config: return kUsage;
    default: return kPipelineFailure;
  }
}

void emit(const Json& j, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << '\n';
  } else {
    save_json(path, j);
  }
}

RunConfig load_run_config(const std::string& path) {
  if (path.empty()) return RunConfig{};
  return run_config_from_json(load_json(path));
}

struct RegisterArgs {
  std::string src, dst, config, estimator = "lgr", report, correspondences, gt;
  int iterations = -1;
  int mutual_k = 0;
  bool no_timing = false;
};

int cmd_register(const RegisterArgs& a) {
  RunConfig cfg = load_run_config(a.config);
  if (a.iterations > 0) cfg.ransac.iterations = a.iterations;
  if (a.mutual_k > 0) cfg.point_matching.mutual_k = a.mutual_k;
  const Estimator estimator = parse_estimator(a.estimator);
  const PointCloud src = load_cloud(a.src);
  const PointCloud dst = load_cloud(a.dst);
  const PipelineOutput out = register_pair(src, dst, cfg, estimator);
  Json report = registration_report(out, out.result, estimator, cfg, !a.no_timing);
  if (!a.gt.empty()) {
    const GroundTruthFile gt = read_ground_truth(a.gt);
    report["evaluation"] = evaluation_to_json(evaluate_pair(out, out.result, gt.transform, cfg.evaluation));
  }
  if (!a.correspondences.empty()) {
    if (fs::path(a.correspondences).extension() == ".json") {
      save_json(a.correspondences, correspondences_to_json(out.correspondences));
    } else {
      write_correspondences_csv(a.correspondences, out.correspondences);
    }
  }
  emit(report, a.report);
  return kOk;
}

struct SynthArgs {
  std::string spec, out;
  int count = 1;
};

int cmd_synth(const SynthArgs& a) {
  if (a.count < 1) throw Error(ErrorKind::Config, "--count must be >= 1");
  const SynthJob job = synth_job_from_json(load_json(a.spec));
  for (int i = 0; i < a.count; ++i) {
    SynthJob one = job;
    one.scene.seed = job.scene.seed + static_cast<std::uint64_t>(i);
    const SyntheticPair pair = generate_scene(one.scene);
    char name[32];
    std::snprintf(name, sizeof name, "pair_%03d", i);
    const fs::path dir = a.count == 1 ? fs::path(a.out) : fs::path(a.out) / name;
    write_pair(dir, pair, one);
    std::cerr << dir.string() << ": " << pair.src.size() << " / " << pair.dst.size() << " points, overlap "
              << pair.overlap << '\n';
  }
  return kOk;
}

struct BenchArgs {
  std::string scenes, config, report;
  int mutual_k = 0;
  bool no_timing = false;
};

int cmd_bench(const BenchArgs& a) {
  RunConfig cfg = load_run_config(a.config);
  if (a.mutual_k > 0) cfg.point_matching.mutual_k = a.mutual_k;
  emit(run_bench(a.scenes, cfg, !a.no_timing), a.report);
  return kOk;
}

struct GradcheckArgs {
  std::uint64_t seed = 0;
  int trials = 20;
  std::string report;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  const auto entries = run_gradcheck(a.seed, a.trials);
  Json j = Json::array();
  bool all = true;
  for (const auto& e : entries) {
    std::cout << (e.passed() ? "PASS " : "FAIL ") << e.loss << " max_rel_err=" << e.max_relative_error
              << " trials=" << e.trials << '\n';
    j.push_back({{"loss", e.loss},
                 {"trials", e.trials},
                 {"max_relative_error", e.max_relative_error},
                 {"tolerance", e.tolerance},
                 {"passed", e.passed()}});
    all = all && e.passed();
  }
  if (!a.report.empty()) save_json(a.report, j);
  return all ? kOk : kPipelineFailure;
}

struct MetricsArgs {
  std::string pred, gt, src, dst, config, report;
};

/// Accepts either one transform object or {"pairs": [...]} of them.
std::vector<Json> transform_list(const Json& j) {
  if (j.is_object() && j.contains("pairs")) return j["pairs"].get<std::vector<Json>>();
  return {j};
}

int cmd_metrics(const MetricsArgs& a) {
  const RunConfig cfg = load_run_config(a.config);
  const auto preds = transform_list(load_json(a.pred));
  const auto gts = transform_list(load_json(a.gt));
  if (preds.size() != gts.size()) throw Error(ErrorKind::InvalidInput, "prediction and ground-truth counts differ");
  std::vector<double> rres, rtes;
  std::vector<bool> registered;
  std::vector<RigidTransform> estimates;
  std::vector<CorrespondencePoints> gt_points;
  const bool with_clouds = !a.src.empty() && !a.dst.empty();
  PointCloud src, dst;
  if (with_clouds) {
    if (preds.size() != 1) throw Error(ErrorKind::InvalidInput, "--src/--dst need a single pair");
    src = read_ply(a.src);
    dst = read_ply(a.dst);
  }
  Json per_pair = Json::array();
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const RigidTransform est = transform_from_json(preds[i], a.pred);
    const RigidTransform gt = transform_from_json(gts[i], a.gt);
    rres.push_back(relative_rotation_error(est.R, gt.R));
    rtes.push_back(relative_translation_error(est.t, gt.t));
    registered.push_back(rres.back() < cfg.evaluation.rre_limit_deg && rtes.back() < cfg.evaluation.rte_limit);
    Json jp = {{"rre_deg", rres.back()}, {"rte_m", rtes.back()}, {"registered", static_cast<bool>(registered.back())}};
    if (with_clouds) {
      estimates.push_back(est);
      gt_points.push_back(ground_truth_points(src, dst, gt, cfg.evaluation.matching_radius));
      jp["rmse_m"] = correspondence_rmse(est, gt_points.back());
    }
    per_pair.push_back(jp);
  }
  const SuccessfulMeans means = mean_errors_over_successes(rres, rtes, registered);
  Json j = {{"pairs", per_pair},
            {"registration_recall",
             registration_recall_threshold(rres, rtes, cfg.evaluation.rre_limit_deg, cfg.evaluation.rte_limit)},
            {"registered_pairs", means.count},
            {"mean_rre_deg_registered", means.rre_deg},
            {"mean_rte_m_registered", means.rte}};
  if (with_clouds) {
    j["registration_recall_rmse"] = registration_recall_rmse(estimates, gt_points, cfg.evaluation.rmse_limit);
  }
  emit(j, a.report);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Keypoint-free point cloud registration with geometric transformers"};
  app.require_subcommand(1);

  RegisterArgs reg;
  auto* c_reg = app.add_subcommand("register", "Register two point clouds");
  c_reg->add_option("--src", reg.src, "Source PLY")->required();
  c_reg->add_option("--dst", reg.dst, "Target PLY")->required();
  c_reg->add_option("--config", reg.config, "Run configuration JSON");
  c_reg->add_option("--estimator", reg.estimator, "lgr, ransac or svd")
      ->check(CLI::IsMember({"lgr", "ransac", "svd"}));
  c_reg->add_option("--iterations", reg.iterations, "RANSAC iterations");
  c_reg->add_option("--mutual-k", reg.mutual_k, "Mutual top-k for dense matching")->check(CLI::Range(1, 3));
  c_reg->add_option("--report", reg.report, "Report JSON path (stdout when omitted)");
  c_reg->add_option("--correspondences", reg.correspondences, "Write correspondences (.csv or .json)");
  c_reg->add_option("--gt", reg.gt, "Ground-truth JSON to evaluate against");
  c_reg->add_flag("--no-timing", reg.no_timing, "Omit timings from the report");

  SynthArgs syn;
  auto* c_syn = app.add_subcommand("synth", "Generate synthetic scene pairs");
  c_syn->add_option("--spec", syn.spec, "Scene spec JSON")->required();
  c_syn->add_option("--out", syn.out, "Output directory")->required();
  c_syn->add_option("--count", syn.count, "Number of pairs (seeds spec.seed, spec.seed+1, ...)");

  BenchArgs ben;
  auto* c_ben = app.add_subcommand("bench", "Benchmark all estimators on a directory of pairs");
  c_ben->add_option("--scenes", ben.scenes, "Scene directory")->required();
  c_ben->add_option("--config", ben.config, "Run configuration JSON");
  c_ben->add_option("--report", ben.report, "Report JSON path (stdout when omitted)");
  c_ben->add_option("--mutual-k", ben.mutual_k, "Mutual top-k for dense matching")->check(CLI::Range(1, 3));
  c_ben->add_flag("--no-timing", ben.no_timing, "Omit timings from the report");

  GradcheckArgs gc;
  auto* c_gc = app.add_subcommand("gradcheck", "Check loss gradients against finite differences");
  c_gc->add_option("--seed", gc.seed, "Seed");
  c_gc->add_option("--trials", gc.trials, "Trials per loss");
  c_gc->add_option("--report", gc.report, "Report JSON path");

  MetricsArgs met;
  auto* c_met = app.add_subcommand("metrics", "Evaluate predicted transforms");
  c_met->add_option("--pred", met.pred, "Predicted transform(s) JSON")->required();
  c_met->add_option("--gt", met.gt, "Ground-truth transform(s) JSON")->required();
  c_met->add_option("--src", met.src, "Source PLY for RMSE");
  c_met->add_option("--dst", met.dst, "Target PLY for RMSE");
  c_met->add_option("--config", met.config, "Run configuration JSON (thresholds)");
  c_met->add_option("--report", met.report, "Report JSON path (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? kOk : kUsage;
  }

  try {
    if (c_reg->parsed()) return cmd_register(reg);
    if (c_syn->parsed()) return cmd_synth(syn);
    if (c_ben->parsed()) return cmd_bench(ben);
    if (c_gc->parsed()) return cmd_gradcheck(gc);
    if (c_met->parsed()) return cmd_metrics(met);
  } catch (const StageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.kind() == ErrorKind::Io ? kUsage : kPipelineFailure;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const Json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}
