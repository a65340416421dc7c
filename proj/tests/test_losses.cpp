#include "test_util.hpp"

namespace georeg {
namespace {

using testing::random_matrix;

/// Two anchors per side: (p0, q0) and (p1, q1) positive at distance delta_p,
/// cross pairs negative at distance delta_n.
struct MarginCase {
  FeatureMatrix h_p, h_q;
  OverlapLabels labels;
};

MarginCase margin_case() {
  const double b = std::sqrt(1.4 * 1.4 - 0.1 * 0.1);
  MarginCase c;
  c.h_p = FeatureMatrix(2, 2);
  c.h_q = FeatureMatrix(2, 2);
  c.h_p << 0, 0, 0, b;
  c.h_q << 0.1, 0, 0.1, b;
  c.labels.overlap_p = MatrixXd::Identity(2, 2);
  c.labels.overlap_q = MatrixXd::Identity(2, 2);
  return c;
}

/// Direct evaluation of the loss from its definition, one anchor at a time.
double reference_circle_loss(const FeatureMatrix& hp, const FeatureMatrix& hq, const OverlapLabels& labels,
                             const CircleLossConfig& cfg, bool weighted) {
  auto side = [&](const FeatureMatrix& a, const FeatureMatrix& b, const MatrixXd& o) {
    double total = 0.0;
    int anchors = 0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      double sp = 0.0, sn = 0.0;
      bool has_pos = false, has_neg = false;
      for (Eigen::Index j = 0; j < b.rows(); ++j) {
        const double d = (a.row(i) - b.row(j)).norm();
        if (o(i, j) >= cfg.positive_overlap) {
          has_pos = true;
          const double beta = std::max(0.0, cfg.gamma * (d - cfg.delta_p));
          sp += std::exp((weighted ? std::sqrt(o(i, j)) : 1.0) * beta * (d - cfg.delta_p));
        } else if (o(i, j) == 0.0) {
          has_neg = true;
          const double beta = std::max(0.0, cfg.gamma * (cfg.delta_n - d));
          sn += std::exp(beta * (cfg.delta_n - d));
        }
      }
      if (!has_pos) continue;
      ++anchors;
      if (has_neg) total += std::log1p(sp * sn);
    }
    return anchors ? total / anchors : 0.0;
  };
  return 0.5 * (side(hp, hq, labels.overlap_p) + side(hq, hp, labels.overlap_q));
}

OverlapLabels random_labels(Rng& rng, Eigen::Index n, Eigen::Index m) {
  OverlapLabels l;
  l.overlap_p = MatrixXd::Zero(n, m);
  l.overlap_q = MatrixXd::Zero(m, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      if (rng.uniform() < 0.3) l.overlap_p(i, j) = rng.uniform(0.05, 1.0);
      if (rng.uniform() < 0.3) l.overlap_q(j, i) = rng.uniform(0.05, 1.0);
    }
  }
  return l;
}

TEST(CircleLoss, NoAnchorsGivesZero) {
  Rng rng(1);
  OverlapLabels l{MatrixXd::Zero(3, 4), MatrixXd::Zero(4, 3)};
  const auto r = overlap_aware_circle_loss(random_matrix(rng, 3, 5), random_matrix(rng, 4, 5), l);
  EXPECT_EQ(r.loss, 0.0);
  EXPECT_TRUE(r.no_anchors());
  EXPECT_EQ(r.grad_p.cwiseAbs().maxCoeff(), 0.0);
}

TEST(CircleLoss, AtTheMarginsEachAnchorGivesLogTwo) {
  const MarginCase c = margin_case();
  const auto r = overlap_aware_circle_loss(c.h_p, c.h_q, c.labels);
  EXPECT_NEAR(r.loss, std::log(2.0), 1e-12);
  EXPECT_EQ(r.anchors_p, 2u);
  EXPECT_EQ(r.anchors_q, 2u);
}

TEST(CircleLoss, MatchesDirectEvaluation) {
  Rng rng(2);
  CircleLossConfig cfg;
  for (int trial = 0; trial < 30; ++trial) {
    const Eigen::Index n = 2 + static_cast<Eigen::Index>(rng.below(8)), m = 2 + static_cast<Eigen::Index>(rng.below(8));
    const FeatureMatrix hp = normalize_rows_to_sphere(random_matrix(rng, n, 6));
    const FeatureMatrix hq = normalize_rows_to_sphere(random_matrix(rng, m, 6));
    const OverlapLabels l = random_labels(rng, n, m);
    EXPECT_NEAR(overlap_aware_circle_loss(hp, hq, l, cfg).loss, reference_circle_loss(hp, hq, l, cfg, true), 1e-10);
    EXPECT_NEAR(vanilla_circle_loss(hp, hq, l, cfg).loss, reference_circle_loss(hp, hq, l, cfg, false), 1e-10);
  }
}

TEST(CircleLoss, VanillaEqualsWeightedAtFullOverlap) {
  Rng rng(3);
  const FeatureMatrix hp = random_matrix(rng, 5, 4), hq = random_matrix(rng, 6, 4);
  OverlapLabels l = random_labels(rng, 5, 6);
  l.overlap_p = (l.overlap_p.array() > 0).cast<double>();
  l.overlap_q = (l.overlap_q.array() > 0).cast<double>();
  EXPECT_EQ(vanilla_circle_loss(hp, hq, l).loss, overlap_aware_circle_loss(hp, hq, l).loss);
  const MarginCase c = margin_case();
  OverlapLabels quarter = c.labels;
  quarter.overlap_p(0, 0) = 0.25;
  FeatureMatrix far = c.h_q;
  far(0, 0) = 0.5;
  EXPECT_LT(overlap_aware_circle_loss(c.h_p, far, quarter).loss, vanilla_circle_loss(c.h_p, far, quarter).loss);
}

TEST(CircleLoss, MonotoneInPositiveOverlap) {
  Rng rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    const FeatureMatrix hp = random_matrix(rng, 4, 3), hq = random_matrix(rng, 5, 3);
    OverlapLabels l = random_labels(rng, 4, 5);
    l.overlap_p(0, 0) = 0.2;
    double prev = overlap_aware_circle_loss(hp, hq, l).loss;
    for (double o : {0.4, 0.6, 0.8, 1.0}) {
      l.overlap_p(0, 0) = o;
      const double now = overlap_aware_circle_loss(hp, hq, l).loss;
      EXPECT_GE(now, prev - 1e-15);
      prev = now;
    }
  }
}

double fd_relative_error(const FeatureMatrix& analytic, FeatureMatrix x, const std::function<double(const FeatureMatrix&)>& f) {
  double worst = 0.0;
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + h;
    const double up = f(x);
    x.data()[i] = keep - h;
    const double down = f(x);
    x.data()[i] = keep;
    const double fd = (up - down) / (2 * h);
    worst = std::max(worst, std::abs(fd - analytic.data()[i]) / std::max({std::abs(fd), std::abs(analytic.data()[i]), 1e-4}));
  }
  return worst;
}

TEST(CircleLoss, GradientMatchesFiniteDifferences) {
  Rng rng(5);
  for (bool weighted : {true, false}) {
    for (int trial = 0; trial < 5; ++trial) {
      const FeatureMatrix hp = random_matrix(rng, 5, 4, 0.5), hq = random_matrix(rng, 6, 4, 0.5);
      const OverlapLabels l = random_labels(rng, 5, 6);
      auto loss = [&](const FeatureMatrix& a, const FeatureMatrix& b) {
        return weighted ? overlap_aware_circle_loss(a, b, l) : vanilla_circle_loss(a, b, l);
      };
      const auto r = loss(hp, hq);
      EXPECT_LT(fd_relative_error(r.grad_p, hp, [&](const FeatureMatrix& x) { return loss(x, hq).loss; }), 1e-4);
      EXPECT_LT(fd_relative_error(r.grad_q, hq, [&](const FeatureMatrix& x) { return loss(hp, x).loss; }), 1e-4);
    }
  }
}

TEST(CircleLoss, Validation) {
  CircleLossConfig cfg;
  cfg.delta_n = 0.05;
  EXPECT_THROW(cfg.validate(), Error);
  OverlapLabels l{MatrixXd::Constant(1, 1, 1.5), MatrixXd::Zero(1, 1)};
  EXPECT_THROW(overlap_aware_circle_loss(FeatureMatrix::Ones(1, 2), FeatureMatrix::Ones(1, 2), l), Error);
}

AssignmentMatrix manual_assignment(const MatrixXd& z_bar) {
  AssignmentMatrix a;
  a.z_bar = z_bar;
  a.log_z_bar = z_bar.array().log().matrix();
  a.n = z_bar.rows() - 1;
  a.m = z_bar.cols() - 1;
  return a;
}

TEST(PointMatchingLoss, PerfectAndKnownValues) {
  MatrixXd z = MatrixXd::Zero(3, 3);
  z(0, 1) = 1.0;
  z(1, 2) = 1.0;
  z(2, 0) = 1.0;
  PatchMatchLabels gt{{{0, 1}}, {1}, {0}};
  const auto perfect = point_matching_loss(manual_assignment(z), gt);
  EXPECT_EQ(perfect.loss, 0.0);
  EXPECT_FALSE(perfect.floored);
  MatrixXd one = MatrixXd::Constant(2, 2, 0.5);
  one(0, 0) = std::exp(-1.0);
  const auto r = point_matching_loss(manual_assignment(one), PatchMatchLabels{{{0, 0}}, {}, {}});
  EXPECT_NEAR(r.loss, 1.0, 1e-15);
  EXPECT_NEAR(r.gradient(0, 0), -std::exp(1.0), 1e-12);
  const auto floored = point_matching_loss(manual_assignment(one), PatchMatchLabels{{}, {}, {0}});
  EXPECT_FALSE(floored.floored);
  MatrixXd tiny = one;
  tiny(1, 0) = 0.0;
  EXPECT_TRUE(point_matching_loss(manual_assignment(tiny), PatchMatchLabels{{}, {}, {0}}).floored);
  EXPECT_THROW(point_matching_loss(manual_assignment(one), PatchMatchLabels{{{3, 0}}, {}, {}}), Error);
}

TEST(PointMatchingLoss, ScoreGradientMatchesFiniteDifferences) {
  Rng rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    const MatrixXd aug = augment_with_dustbin(random_matrix(rng, 4, 5), 1.0);
    const PatchMatchLabels gt{{{0, 1}, {2, 3}}, {1, 3}, {0, 2, 4}};
    const auto r = point_matching_loss_from_scores(aug, 20, gt);
    EXPECT_NEAR(r.loss, point_matching_loss(sinkhorn(aug, 20), gt).loss, 1e-9);
    MatrixXd x = aug;
    double worst = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double keep = x.data()[i];
      x.data()[i] = keep + 1e-6;
      const double up = point_matching_loss_from_scores(x, 20, gt).loss;
      x.data()[i] = keep - 1e-6;
      const double down = point_matching_loss_from_scores(x, 20, gt).loss;
      x.data()[i] = keep;
      const double fd = (up - down) / 2e-6;
      worst = std::max(worst, std::abs(fd - r.gradient.data()[i]) / std::max({std::abs(fd), std::abs(r.gradient.data()[i]), 1e-4}));
    }
    EXPECT_LT(worst, 1e-4);
  }
}

TEST(CrossEntropy, KnownGradients) {
  VectorXd y(3), g(3);
  y << std::log(0.6), std::log(0.3), std::log(0.1);
  g << 1, 0, 1;
  const VectorXd d = softmax_ce_gradient_demo(y, g);
  EXPECT_NEAR(d(0), 0.2, 1e-12);
  EXPECT_NEAR(d(1), 0.6, 1e-12);
  g << 1, 0, 0;
  const VectorXd single = softmax_ce_gradient_demo(y, g);
  EXPECT_LE(single(0), 0.0);
  EXPECT_NEAR(single(0), -0.4, 1e-12);
  EXPECT_THROW(softmax_ce_gradient_demo(y, VectorXd::Zero(3)), Error);
  EXPECT_THROW(multi_label_cross_entropy(y, VectorXd::Zero(2)), Error);
}

TEST(CrossEntropy, ConfidentPositiveIsPushedDown) {
  Rng rng(7);
  int hit = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::Index n = 3 + static_cast<Eigen::Index>(rng.below(8));
    VectorXd y(n), g = VectorXd::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) y(i) = 3.0 * rng.normal();
    const Eigen::Index positives = 2 + static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n - 2)));
    g.head(positives).setOnes();
    const auto r = multi_label_cross_entropy(y, g);
    Eigen::Index top;
    r.probabilities.head(positives).maxCoeff(&top);
    if (r.probabilities(top) > 1.0 / static_cast<double>(positives)) {
      ++hit;
      EXPECT_GT(r.gradient(top), 0.0);
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      VectorXd up = y, down = y;
      up(i) += 1e-6;
      down(i) -= 1e-6;
      const double fd = (multi_label_cross_entropy(up, g).loss - multi_label_cross_entropy(down, g).loss) / 2e-6;
      EXPECT_NEAR(fd, r.gradient(i), 1e-6);
    }
  }
  EXPECT_GT(hit, 20);
}

TEST(Gradcheck, AllLossesPass) {
  for (const auto& e : run_gradcheck(3, 3)) EXPECT_TRUE(e.passed()) << e.loss << " " << e.max_relative_error;
}

}  // namespace
}  // namespace georeg
