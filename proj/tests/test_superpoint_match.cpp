#include "test_util.hpp"

namespace georeg {
namespace {

using testing::random_matrix;

TEST(SphereNormalization, UnitRowsAndZeroRowError) {
  FeatureMatrix h(2, 2);
  h << 3, 4, 0, -2;
  const FeatureMatrix u = normalize_rows_to_sphere(h);
  EXPECT_NEAR(u(0, 0), 0.6, 1e-15);
  EXPECT_NEAR(u(0, 1), 0.8, 1e-15);
  EXPECT_EQ(u(1, 1), -1.0);
  h.row(1).setZero();
  EXPECT_THROW(normalize_rows_to_sphere(h), Error);
}

TEST(GaussianCorrelation, OrthogonalAndAntipodalRows) {
  FeatureMatrix p(1, 3), q(3, 3);
  p << 1, 0, 0;
  q << 1, 0, 0, 0, 1, 0, -1, 0, 0;
  const MatrixXd s = gaussian_correlation(p, q);
  EXPECT_DOUBLE_EQ(s(0, 0), 1.0);
  EXPECT_NEAR(s(0, 1), 0.13534, 1e-5);
  EXPECT_NEAR(s(0, 2), 0.018316, 1e-6);
  EXPECT_THROW(gaussian_correlation(p, FeatureMatrix::Ones(1, 2)), Error);
}

TEST(DualNormalization, KnownMatrices) {
  MatrixXd a = MatrixXd::Constant(2, 2, 2.0);
  EXPECT_LT((dual_normalize(a).array() - 0.25).abs().maxCoeff(), 1e-15);
  MatrixXd b(2, 2);
  b << 4, 1, 1, 1;
  const MatrixXd d = dual_normalize(b);
  EXPECT_NEAR(d(0, 0), 0.64, 1e-15);
  EXPECT_NEAR(d(0, 1), 0.1, 1e-15);
  EXPECT_NEAR(d(1, 0), 0.1, 1e-15);
  EXPECT_NEAR(d(1, 1), 0.25, 1e-15);
  EXPECT_THROW(dual_normalize(MatrixXd::Zero(2, 2)), Error);
}

TEST(DualNormalization, MutualMaximumCanBeDemoted) {
  MatrixXd s(2, 2);
  s << 1.0, 0.9, 0.9, 0.01;
  const MatrixXd d = dual_normalize(s);
  EXPECT_NEAR(d(0, 0), 1.0 / (1.9 * 1.9), 1e-15);
  EXPECT_NEAR(d(0, 1), (0.9 / 1.9) * (0.9 / 0.91), 1e-15);
  EXPECT_LT(d(0, 0), d(0, 1));
}

TEST(DualNormalization, RowMaximumSurvivesWhenItsColumnIsLightest) {
  Rng rng(3);
  int checked = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const Eigen::Index n = 2 + static_cast<Eigen::Index>(rng.below(10)), m = 2 + static_cast<Eigen::Index>(rng.below(10));
    MatrixXd s(n, m);
    for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = rng.uniform(0.01, 1.0);
    const MatrixXd d = dual_normalize(s);
    const Eigen::RowVectorXd col = s.colwise().sum();
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index j;
      s.row(i).maxCoeff(&j);
      if (col(j) > col.minCoeff()) continue;
      ++checked;
      for (Eigen::Index k = 0; k < m; ++k) {
        if (k != j) {
          EXPECT_LT(d(i, k), d(i, j));
        }
      }
    }
  }
  EXPECT_GT(checked, 50);
}

TEST(TopK, MatchesFullSortOracle) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    MatrixXd s(50, 40);
    for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = std::round(rng.uniform(0, 100)) / 100.0;
    const auto got = select_topk_correspondences(s, 256);
    std::vector<std::tuple<double, std::size_t, std::size_t>> all;
    for (Eigen::Index i = 0; i < 50; ++i) {
      for (Eigen::Index j = 0; j < 40; ++j) all.emplace_back(-s(i, j), i, j);
    }
    std::sort(all.begin(), all.end());
    ASSERT_EQ(got.size(), 256u);
    for (std::size_t r = 0; r < 256; ++r) {
      EXPECT_EQ(got[r].score, -std::get<0>(all[r]));
      EXPECT_EQ(got[r].src, std::get<1>(all[r]));
      EXPECT_EQ(got[r].dst, std::get<2>(all[r]));
    }
  }
}

TEST(TopK, CountLargerThanMatrixAndValidation) {
  const MatrixXd s = MatrixXd::Ones(2, 3);
  const auto got = select_topk_correspondences(s, 100);
  ASSERT_EQ(got.size(), 6u);
  EXPECT_EQ(got[1].src, 0u);
  EXPECT_EQ(got[1].dst, 1u);
  EXPECT_THROW(select_topk_correspondences(s, 0), Error);
}

TEST(MatchSuperpoints, IdenticalFeaturesPairDiagonal) {
  Rng rng(5);
  const FeatureMatrix h = random_matrix(rng, 12, 16);
  const auto got = match_superpoints(h, h, 12);
  ASSERT_EQ(got.size(), 12u);
  for (const auto& c : got) EXPECT_EQ(c.src, c.dst);
}

TEST(MatchSuperpoints, ScaleInvariantRows) {
  Rng rng(6);
  const FeatureMatrix p = random_matrix(rng, 10, 8), q = random_matrix(rng, 9, 8);
  const auto a = match_superpoints(p, q, 20);
  const auto b = match_superpoints(FeatureMatrix(3.0 * p), q, 20);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].src, b[i].src);
    EXPECT_EQ(a[i].dst, b[i].dst);
    EXPECT_NEAR(a[i].score, b[i].score, 1e-12);
  }
}

}  // namespace
}  // namespace georeg
