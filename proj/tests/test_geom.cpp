#include "test_util.hpp"

#include <set>

namespace georeg {
namespace {

using testing::random_cloud;
using testing::random_points;

TEST(VoxelDownsample, CentroidsInFirstOccurrenceOrder) {
  const PointCloud cloud{{Point3(0.15, 0.1, 0.1), Point3(0.05, 0.05, 0.05), Point3(0.05, 0.02, 0.08),
                          Point3(0.25, 0.05, 0.05)},
                         std::nullopt};
  const PointCloud out = voxel_downsample(cloud, 0.1);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_LT((out.points[0] - Point3(0.15, 0.1, 0.1)).norm(), 1e-15);
  EXPECT_LT((out.points[1] - Point3(0.05, 0.035, 0.065)).norm(), 1e-15);
  EXPECT_LT((out.points[2] - Point3(0.25, 0.05, 0.05)).norm(), 1e-15);
}

TEST(VoxelDownsample, AveragesFeatures) {
  PointCloud cloud{{Point3(0.01, 0, 0), Point3(0.02, 0, 0), Point3(0.5, 0, 0)}, std::nullopt};
  FeatureMatrix f(3, 2);
  f << 1, 2, 3, 4, 5, 6;
  cloud.features = f;
  const PointCloud out = voxel_downsample(cloud, 0.1);
  ASSERT_TRUE(out.features);
  EXPECT_DOUBLE_EQ((*out.features)(0, 0), 2.0);
  EXPECT_DOUBLE_EQ((*out.features)(0, 1), 3.0);
  EXPECT_DOUBLE_EQ((*out.features)(1, 1), 6.0);
}

TEST(VoxelDownsample, EveryOutputVoxelIsDistinctAndOccupied) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const PointCloud cloud = random_cloud(rng, 500);
    const double v = rng.uniform(0.05, 0.5);
    const PointCloud out = voxel_downsample(cloud, v);
    std::set<VoxelKey> in_keys, out_keys;
    for (const auto& p : cloud.points) in_keys.insert(voxel_key(p, v));
    for (const auto& p : out.points) out_keys.insert(voxel_key(p, v));
    EXPECT_EQ(out.size(), in_keys.size());
    EXPECT_EQ(out_keys, in_keys);
  }
}

TEST(VoxelDownsample, RejectsBadInput) {
  const PointCloud cloud{{Point3(0, 0, 0)}, std::nullopt};
  EXPECT_THROW(voxel_downsample(cloud, 0.0), Error);
  EXPECT_THROW(voxel_downsample(cloud, -1.0), Error);
  EXPECT_TRUE(voxel_downsample(PointCloud{}, 0.1).empty());
}

/// Brute-force nearest node with lowest index on ties.
std::vector<std::size_t> nearest_oracle(const PointCloud& dense, const PointCloud& nodes) {
  std::vector<std::size_t> out;
  for (const auto& p : dense.points) {
    std::size_t best = 0;
    for (std::size_t s = 1; s < nodes.size(); ++s) {
      if ((p - nodes.points[s]).squaredNorm() < (p - nodes.points[best]).squaredNorm()) best = s;
    }
    out.push_back(best);
  }
  return out;
}

TEST(Grouping, MatchesBruteForceAndPrunesEmptyPatches) {
  Rng rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    const PointCloud dense = random_cloud(rng, 200 + rng.below(200));
    PointCloud nodes = random_cloud(rng, 5 + rng.below(30), 1.5);
    const PatchAssignment a = point_to_node_grouping(dense, nodes);
    const auto oracle = nearest_oracle(dense, nodes);
    std::vector<std::size_t> sizes(nodes.size(), 0);
    for (auto s : oracle) ++sizes[s];
    std::vector<std::size_t> kept;
    for (std::size_t s = 0; s < nodes.size(); ++s) {
      if (sizes[s] > 0) kept.push_back(s);
    }
    EXPECT_EQ(a.kept_superpoints, kept);
    std::size_t total = 0;
    for (std::size_t i = 0; i < dense.size(); ++i) {
      EXPECT_EQ(a.kept_superpoints[a.superpoint_of_point[i]], oracle[i]);
      ++total;
    }
    for (std::size_t s = 0; s < a.num_patches(); ++s) {
      EXPECT_FALSE(a.patches[s].empty());
      for (auto i : a.patches[s]) EXPECT_EQ(a.superpoint_of_point[i], s);
    }
    EXPECT_EQ(total, dense.size());
    EXPECT_EQ(select_superpoints(nodes, a).size(), a.num_patches());
  }
}

TEST(Grouping, TieGoesToLowerIndex) {
  const PointCloud dense{{Point3(0, 0, 0)}, std::nullopt};
  const PointCloud nodes{{Point3(1, 0, 0), Point3(-1, 0, 0)}, std::nullopt};
  const PatchAssignment a = point_to_node_grouping(dense, nodes);
  ASSERT_EQ(a.kept_superpoints, std::vector<std::size_t>{0});
}

TEST(Grouping, RejectsEmptySuperpoints) {
  try {
    point_to_node_grouping(PointCloud{{Point3(0, 0, 0)}, std::nullopt}, PointCloud{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidInput);
  }
}

TEST(Grouping, EmptyDenseCloudHasNoPatches) {
  try {
    point_to_node_grouping(PointCloud{}, PointCloud{{Point3(0, 0, 0)}, std::nullopt});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NoPatches);
  }
}

TEST(WeightedSvd, RecoversNoiselessTransform) {
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const RigidTransform T = random_transform(rng, std::numbers::pi, 5.0);
    const auto src = random_points(rng, 3 + rng.below(50), 2.0);
    const auto dst = apply_transform(T, src);
    std::vector<double> w(src.size());
    for (auto& x : w) x = rng.uniform(0.1, 2.0);
    const RigidTransform E = weighted_svd_transform(src, dst, w);
    EXPECT_LT((E.R - T.R).norm(), 1e-9);
    EXPECT_LT((E.t - T.t).norm(), 1e-9);
    EXPECT_NEAR(E.R.determinant(), 1.0, 1e-12);
  }
}

TEST(WeightedSvd, PlanarInputNeedsReflectionCorrection) {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Point3> src;
    for (int i = 0; i < 10; ++i) src.emplace_back(rng.uniform(-1, 1), rng.uniform(-1, 1), 0.0);
    const RigidTransform T = random_transform(rng, std::numbers::pi, 1.0);
    const auto dst = apply_transform(T, src);
    const std::vector<double> w(src.size(), 1.0);
    const RigidTransform E = weighted_svd_transform(src, dst, w);
    EXPECT_NEAR(E.R.determinant(), 1.0, 1e-12);
    EXPECT_LT((E.R - T.R).norm(), 1e-9);
  }
}

TEST(WeightedSvd, NoisyFitMinimisesWeightedResidual) {
  Rng rng(13);
  for (int trial = 0; trial < 30; ++trial) {
    const RigidTransform T = random_transform(rng, std::numbers::pi, 1.0);
    const auto src = random_points(rng, 30);
    auto dst = apply_transform(T, src);
    for (auto& q : dst) q += Point3(rng.normal(), rng.normal(), rng.normal()) * 0.02;
    std::vector<double> w(src.size());
    for (auto& x : w) x = rng.uniform(0.1, 1.0);
    const RigidTransform E = weighted_svd_transform(src, dst, w);
    const double best = weighted_squared_residual(E, src, dst, w);
    for (int k = 0; k < 20; ++k) {
      RigidTransform P = E;
      P.R = axis_angle(Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal()), 1e-3) * E.R;
      P.t += Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal()) * 1e-3;
      EXPECT_GE(weighted_squared_residual(P, src, dst, w), best);
    }
  }
}

TEST(WeightedSvd, ZeroWeightedPointsAreIgnored) {
  Rng rng(14);
  const RigidTransform T = random_transform(rng, 2.0, 1.0);
  auto src = random_points(rng, 10);
  auto dst = apply_transform(T, src);
  std::vector<double> w(src.size(), 1.0);
  dst[0] += Point3(5, 5, 5);
  w[0] = 0.0;
  const RigidTransform E = weighted_svd_transform(src, dst, w);
  EXPECT_LT((E.R - T.R).norm(), 1e-9);
}

TEST(WeightedSvd, DegenerateInputs) {
  const std::vector<Point3> line{Point3(0, 0, 0), Point3(1, 0, 0), Point3(2, 0, 0), Point3(3, 0, 0)};
  const std::vector<double> ones(4, 1.0);
  auto kind_of = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::Io;
  };
  EXPECT_EQ(kind_of([&] { weighted_svd_transform(line, line, ones); }), ErrorKind::Degenerate);
  const std::vector<Point3> same(4, Point3(1, 2, 3));
  EXPECT_EQ(kind_of([&] { weighted_svd_transform(same, same, ones); }), ErrorKind::Degenerate);
  const std::vector<Point3> two{Point3(0, 0, 0), Point3(1, 0, 0)};
  const std::vector<double> w2(2, 1.0);
  EXPECT_EQ(kind_of([&] { weighted_svd_transform(two, two, w2); }), ErrorKind::Degenerate);
  const std::vector<Point3> tri{Point3(0, 0, 0), Point3(1, 0, 0), Point3(0, 1, 0)};
  const std::vector<double> zeros(3, 0.0);
  EXPECT_EQ(kind_of([&] { weighted_svd_transform(tri, tri, zeros); }), ErrorKind::Degenerate);
  const std::vector<double> neg{1.0, -1.0, 1.0};
  EXPECT_EQ(kind_of([&] { weighted_svd_transform(tri, tri, neg); }), ErrorKind::InvalidInput);
  EXPECT_EQ(kind_of([&] { weighted_svd_transform(tri, line, ones); }), ErrorKind::InvalidInput);
}

TEST(ApplyTransform, KeepsFeaturesAndRejectsNonFinite) {
  PointCloud c{{Point3(1, 0, 0)}, FeatureMatrix::Ones(1, 2)};
  RigidTransform T;
  T.t = Eigen::Vector3d(0, 1, 0);
  const PointCloud out = apply_transform(T, c);
  EXPECT_EQ(out.points[0], Point3(1, 1, 0));
  EXPECT_TRUE(out.features);
  c.points[0].x() = std::numeric_limits<double>::infinity();
  EXPECT_THROW(apply_transform(T, c), Error);
}

}  // namespace
}  // namespace georeg
