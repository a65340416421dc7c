#include "test_util.hpp"

#include <atomic>
#include <set>

namespace georeg {
namespace {

using testing::random_points;

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, KnownSplitMix64Values) {
  Rng rng(0);
  EXPECT_EQ(rng.next_u64(), 0xE220A8397B1DCDAFULL);
  EXPECT_EQ(rng.next_u64(), 0x6E789E6AA1B965F4ULL);
}

TEST(Rng, UniformAndBelowStayInRange) {
  Rng rng(7);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
    EXPECT_LT(rng.below(13), 13u);
  }
}

TEST(Rng, NormalMomentsAreReasonable) {
  Rng rng(3);
  double sum = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sq += x * x;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.05);
  EXPECT_NEAR(sq / n, 1.0, 0.05);
}

TEST(Rng, DerivedStreamsDiffer) {
  Rng a = Rng::derive(1, 0), b = Rng::derive(1, 1), c = Rng::derive(2, 0);
  const auto x = a.next_u64(), y = b.next_u64(), z = c.next_u64();
  EXPECT_NE(x, y);
  EXPECT_NE(x, z);
  EXPECT_EQ(Rng::derive(1, 0).next_u64(), x);
}

TEST(RigidTransform, InverseAndCompose) {
  Rng rng(5);
  for (int i = 0; i < 50; ++i) {
    const RigidTransform T = random_transform(rng, std::numbers::pi, 2.0);
    const RigidTransform U = random_transform(rng, std::numbers::pi, 2.0);
    EXPECT_TRUE(T.is_valid());
    const Point3 p(rng.normal(), rng.normal(), rng.normal());
    EXPECT_LT((T.inverse().apply(T.apply(p)) - p).norm(), 1e-12);
    EXPECT_LT((T.compose(U).apply(p) - T.apply(U.apply(p))).norm(), 1e-12);
  }
}

TEST(RigidTransform, RejectsReflection) {
  RigidTransform T;
  T.R(2, 2) = -1.0;
  EXPECT_FALSE(T.is_valid());
  EXPECT_THROW(validate(T), Error);
}

TEST(Error, KindAndStage) {
  const Error e(ErrorKind::Degenerate, "rank");
  EXPECT_EQ(e.kind(), ErrorKind::Degenerate);
  EXPECT_STREQ(e.what(), "degenerate-input: rank");
  const StageError s("registration", e);
  EXPECT_EQ(s.stage(), "registration");
  EXPECT_EQ(s.kind(), ErrorKind::Degenerate);
  EXPECT_NE(std::string(s.what()).find("[registration]"), std::string::npos);
}

TEST(PointCloud, ValidateRejectsNonFiniteAndBadFeatures) {
  PointCloud c{{Point3(0, 0, 0), Point3(std::nan(""), 0, 0)}, std::nullopt};
  EXPECT_THROW(validate(c), Error);
  c.points[1] = Point3(1, 0, 0);
  EXPECT_NO_THROW(validate(c));
  c.features = FeatureMatrix::Zero(3, 2);
  EXPECT_THROW(validate(c), Error);
}

TEST(Parallel, VisitsEveryIndexOnce) {
  for (std::size_t threads : {1u, 2u, 5u}) {
    std::vector<std::atomic<int>> hits(1000);
    parallel_for(hits.size(), [&](std::size_t i) { hits[i].fetch_add(1); }, threads);
    for (const auto& h : hits) EXPECT_EQ(h.load(), 1);
  }
}

TEST(Parallel, RethrowsLowestFailingIndex) {
  for (std::size_t threads : {1u, 4u}) {
    try {
      parallel_for(100, [](std::size_t i) {
        if (i % 10 == 7) throw Error(ErrorKind::Numerical, std::to_string(i));
      }, threads);
      FAIL() << "expected an exception";
    } catch (const Error& e) {
      EXPECT_STREQ(e.what(), "numerical: 7");
    }
  }
}

TEST(Parallel, ThreadBudgetFromEnvironment) {
  {
    testing::ScopedEnv env("GEOREG_THREADS", "3");
    EXPECT_EQ(thread_budget(), 3u);
  }
  {
    testing::ScopedEnv env("GEOREG_THREADS", "zero");
    EXPECT_GE(thread_budget(), 1u);
  }
}

std::vector<Neighbor> brute_force_sorted(std::span<const Point3> pts, const Point3& q) {
  std::vector<Neighbor> all;
  for (std::size_t i = 0; i < pts.size(); ++i) all.push_back({i, squared_distance(pts[i], q)});
  std::sort(all.begin(), all.end(), neighbor_less);
  return all;
}

TEST(KdTree, NearestKnnAndRadiusMatchBruteForce) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const auto pts = random_points(rng, 50 + rng.below(300));
    const KdTree tree(pts);
    for (int q = 0; q < 20; ++q) {
      const Point3 query(rng.uniform(-1.2, 1.2), rng.uniform(-1.2, 1.2), rng.uniform(-1.2, 1.2));
      const auto oracle = brute_force_sorted(pts, query);
      EXPECT_EQ(tree.nearest(query).index, oracle[0].index);

      const std::size_t k = 1 + rng.below(10);
      const auto knn = tree.knn(query, k);
      ASSERT_EQ(knn.size(), k);
      for (std::size_t i = 0; i < k; ++i) EXPECT_EQ(knn[i].index, oracle[i].index);

      const double r = rng.uniform(0.05, 0.8);
      std::vector<std::size_t> expected;
      for (std::size_t i = 0; i < pts.size(); ++i) {
        if (squared_distance(pts[i], query) < r * r) expected.push_back(i);
      }
      EXPECT_EQ(tree.radius(query, r), expected);
      auto unordered = tree.radius_unordered(query, r);
      std::sort(unordered.begin(), unordered.end());
      EXPECT_EQ(unordered, expected);
    }
  }
}

TEST(KdTree, TiesResolveToLowestIndex) {
  const std::vector<Point3> pts{Point3(1, 0, 0), Point3(-1, 0, 0), Point3(0, 1, 0), Point3(1, 0, 0)};
  const KdTree tree(pts);
  EXPECT_EQ(tree.nearest(Point3(0, 0, 0)).index, 0u);
  const auto knn = tree.knn(Point3(1, 0, 0), 2);
  EXPECT_EQ(knn[0].index, 0u);
  EXPECT_EQ(knn[1].index, 3u);
}

TEST(KdTree, KnnExcludesGivenIndexAndHandlesDuplicates) {
  std::vector<Point3> pts(40, Point3(0.5, 0.5, 0.5));
  pts.emplace_back(0, 0, 0);
  const KdTree tree(pts);
  const auto knn = tree.knn(pts[0], 3, 0);
  ASSERT_EQ(knn.size(), 3u);
  EXPECT_EQ(knn[0].index, 1u);
  EXPECT_EQ(knn[2].index, 3u);
  EXPECT_EQ(tree.radius(pts[0], 0.1).size(), 40u);
}

TEST(KdTree, EmptyTree) {
  const KdTree tree;
  EXPECT_EQ(tree.nearest(Point3::Zero()).index, std::numeric_limits<std::size_t>::max());
  EXPECT_TRUE(tree.knn(Point3::Zero(), 3).empty());
  EXPECT_TRUE(tree.radius(Point3::Zero(), 1.0).empty());
}

TEST(AxisAngle, QuarterTurn) {
  const Matrix3 R = axis_angle(Eigen::Vector3d::UnitZ(), std::numbers::pi / 2);
  EXPECT_LT((R * Eigen::Vector3d::UnitX() - Eigen::Vector3d::UnitY()).norm(), 1e-15);
}

}  // namespace
}  // namespace georeg
