#include "test_util.hpp"

namespace georeg {
namespace {

using testing::random_points;

TEST(InlierRatio, HalfDisplacedAndStrictBoundary) {
  const std::vector<Point3> src{Point3(0, 0, 0), Point3(1, 0, 0), Point3(2, 0, 0), Point3(3, 0, 0)};
  std::vector<Point3> dst = src;
  dst[2] += Point3(0, 1, 0);
  dst[3] += Point3(0, 0.1, 0);
  const PointCorrespondences m{{0, 0, 1}, {1, 1, 1}, {2, 2, 1}, {3, 3, 1}};
  const auto r = inlier_ratio(m, src, dst, RigidTransform{}, 0.1);
  EXPECT_FALSE(r.empty);
  EXPECT_DOUBLE_EQ(r.value, 0.5);
  EXPECT_TRUE(inlier_ratio({}, src, dst, RigidTransform{}, 0.1).empty);
}

TEST(InlierRatio, AppliesGroundTruthToSource) {
  Rng rng(1);
  const RigidTransform T = random_transform(rng, 2.0, 2.0);
  const auto src = random_points(rng, 50);
  const auto dst = apply_transform(T, src);
  PointCorrespondences m;
  for (std::size_t i = 0; i < 50; ++i) m.push_back({i, i, 1.0});
  EXPECT_DOUBLE_EQ(inlier_ratio(m, src, dst, T, 0.1).value, 1.0);
  EXPECT_LT(inlier_ratio(m, src, dst, RigidTransform{}, 0.1).value, 0.5);
}

TEST(FeatureMatchingRecall, StrictThreshold) {
  const std::vector<double> r{0.06, 0.04};
  EXPECT_DOUBLE_EQ(feature_matching_recall(r, 0.05), 0.5);
  const std::vector<double> edge{0.05};
  EXPECT_DOUBLE_EQ(feature_matching_recall(edge, 0.05), 0.0);
  EXPECT_THROW(feature_matching_recall(std::vector<double>{}, 0.05), Error);
}

TEST(RegistrationRecallRmse, ThresholdAndCounting) {
  Rng rng(2);
  CorrespondencePoints gt;
  gt.src = random_points(rng, 20);
  gt.dst = gt.src;
  RigidTransform off;
  off.t = Eigen::Vector3d(0.3, 0, 0);
  EXPECT_NEAR(correspondence_rmse(off, gt), 0.3, 1e-12);
  RigidTransform small;
  small.t = Eigen::Vector3d(0.1, 0, 0);
  const std::vector<RigidTransform> est{RigidTransform{}, off, small, RigidTransform{}};
  const std::vector<CorrespondencePoints> gts(4, gt);
  EXPECT_DOUBLE_EQ(registration_recall_rmse(est, gts, 0.2), 0.75);
  EXPECT_TRUE(std::isinf(correspondence_rmse(off, CorrespondencePoints{})));
  EXPECT_THROW(registration_recall_rmse(est, std::span(gts).first(3), 0.2), Error);
}

TEST(PatchInlierRatio, DistantPatchIsOutlier) {
  const std::vector<Point3> dp{Point3(0, 0, 0), Point3(0.01, 0, 0)};
  const std::vector<Point3> dq{Point3(0.02, 0, 0), Point3(10, 0, 0)};
  const std::vector<std::vector<std::size_t>> pp{{0, 1}}, pq{{0}, {1}};
  const SuperpointCorrespondences m{{0, 0, 1.0}, {0, 1, 0.5}};
  const auto r = patch_inlier_ratio(m, pp, pq, dp, dq, RigidTransform{}, 0.05);
  EXPECT_DOUBLE_EQ(r.value, 0.5);
  EXPECT_TRUE(patch_inlier_ratio({}, pp, pq, dp, dq, RigidTransform{}, 0.05).empty);
}

TEST(PatchInlierRatio, MatchesBruteForce) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const RigidTransform T = random_transform(rng, 1.0, 0.5);
    const auto dp = random_points(rng, 300);
    std::vector<Point3> dq = apply_transform(T, dp);
    for (auto& q : dq) q += 0.05 * Point3(rng.normal(), rng.normal(), rng.normal());
    const auto a = point_to_node_grouping(PointCloud{dp, std::nullopt}, PointCloud{random_points(rng, 12), std::nullopt});
    const auto b = point_to_node_grouping(PointCloud{dq, std::nullopt}, PointCloud{apply_transform(T, random_points(rng, 12)), std::nullopt});
    SuperpointCorrespondences m;
    for (std::size_t i = 0; i < a.num_patches(); ++i) {
      for (std::size_t j = 0; j < b.num_patches(); ++j) m.push_back({i, j, 1.0});
    }
    std::size_t expected = 0;
    for (const auto& c : m) {
      bool hit = false;
      for (auto x : a.patches[c.src]) {
        for (auto y : b.patches[c.dst]) hit = hit || (T.apply(dp[x]) - dq[y]).norm() < 0.05;
      }
      expected += hit;
    }
    const auto r = patch_inlier_ratio(m, a.patches, b.patches, dp, dq, T, 0.05);
    EXPECT_EQ(r.value, static_cast<double>(expected) / static_cast<double>(m.size()));
  }
}

TEST(RotationError, KnownAnglesAndMetricProperties) {
  const Matrix3 r5 = axis_angle(Eigen::Vector3d::UnitZ(), 5.0 * kDegToRad);
  EXPECT_NEAR(relative_rotation_error(r5, Matrix3::Identity()), 5.0, 1e-9);
  const Matrix3 flip = axis_angle(Eigen::Vector3d::UnitX(), std::numbers::pi);
  EXPECT_NEAR(relative_rotation_error(flip, Matrix3::Identity()), 180.0, 1e-6);
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix3 a = random_transform(rng, std::numbers::pi, 0).R;
    const Matrix3 b = random_transform(rng, std::numbers::pi, 0).R;
    const Matrix3 c = random_transform(rng, std::numbers::pi, 0).R;
    EXPECT_NEAR(relative_rotation_error(a, b), relative_rotation_error(b, a), 1e-9);
    EXPECT_LE(relative_rotation_error(a, c), relative_rotation_error(a, b) + relative_rotation_error(b, c) + 1e-9);
  }
}

TEST(TranslationError, ThreeFourFive) {
  EXPECT_DOUBLE_EQ(relative_translation_error(Eigen::Vector3d(3, 4, 0), Eigen::Vector3d::Zero()), 5.0);
  EXPECT_EQ(relative_translation_error(Eigen::Vector3d(1, 2, 3), Eigen::Vector3d(1, 2, 3)), 0.0);
}

TEST(RegistrationRecallThreshold, BothConditionsStrict) {
  const std::vector<double> rre{1.0, 6.0, 5.0, 0.0}, rte{0.1, 0.1, 0.1, 3.0};
  EXPECT_DOUBLE_EQ(registration_recall_threshold(rre, rte, 5.0, 2.0), 0.25);
  const std::vector<double> rre2{1.0, 1.0, 9.0, 9.0}, rte2{0.1, 0.1, 0.1, 0.1};
  EXPECT_DOUBLE_EQ(registration_recall_threshold(rre2, rte2, 5.0, 2.0), 0.5);
  EXPECT_THROW(registration_recall_threshold(rre, std::vector<double>{}, 5.0, 2.0), Error);
}

TEST(SuccessfulMeans, AveragesOnlyFlaggedPairs) {
  const std::vector<double> rre{1.0, 3.0, 100.0}, rte{0.1, 0.3, 9.0};
  const auto m = mean_errors_over_successes(rre, rte, {true, true, false});
  EXPECT_EQ(m.count, 2u);
  EXPECT_DOUBLE_EQ(m.rre_deg, 2.0);
  EXPECT_DOUBLE_EQ(m.rte, 0.2);
  EXPECT_EQ(mean_errors_over_successes(rre, rte, {false, false, false}).count, 0u);
}

TEST(PairReport, EvaluatePairOnTruth) {
  SceneSpec spec;
  spec.seed = 3;
  const SyntheticPair pair = generate_scene(spec);
  const auto out = register_pair(pair.src, pair.dst, RunConfig{});
  RegistrationResult truth;
  truth.transform = pair.transform;
  const PairEvaluation ev = evaluate_pair(out, truth, pair.transform, RunConfig{}.evaluation);
  EXPECT_LT(ev.rre_deg, 1e-5);
  EXPECT_EQ(ev.rte, 0.0);
  EXPECT_TRUE(ev.registered);
  EXPECT_LT(ev.rmse, 0.05);
  const PairEvaluation est = evaluate_pair(out, out.result, pair.transform, RunConfig{}.evaluation);
  EXPECT_EQ(est.registered, est.rre_deg < 5.0 && est.rte < 2.0);
  EXPECT_FALSE(est.inlier_ratio.empty);
}

}  // namespace
}  // namespace georeg
