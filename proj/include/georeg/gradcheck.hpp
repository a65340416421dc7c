#pragma once

#include "georeg/core.hpp"
#include "georeg/losses.hpp"
#include "georeg/point_match.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace georeg {

/// Largest |a - n| / max(|a|, |n|) over coordinates where either magnitude
/// reaches `floor`.
inline double max_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                                 double floor = 1e-8) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double scale = std::max(std::abs(analytic[i]), std::abs(numeric[i]));
    if (scale < floor) continue;
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / scale);
  }
  return worst;
}

/// Five-point central differences of f over every entry of x.
inline std::vector<double> central_differences(std::vector<double> x, const std::function<double(std::span<const double>)>& f,
                                               double step) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    const auto at = [&](double offset) {
      x[i] = keep + offset;
      return f(x);
    };
    const double up2 = at(2.0 * step), up = at(step), down = at(-step), down2 = at(-2.0 * step);
    x[i] = keep;
    g[i] = (8.0 * (up - down) - (up2 - down2)) / (12.0 * step);
  }
  return g;
}

struct GradcheckEntry {
  std::string loss;
  int trials = 0;
  double max_relative_error = 0.0;
  double tolerance = 1e-4;

  bool passed() const { return max_relative_error < tolerance; }
};

namespace detail {

inline FeatureMatrix random_features(Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale) {
  FeatureMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

/// Overlaps with a mix of positives, negatives and ignored pairs (0 < o < 0.1).
inline OverlapLabels random_overlaps(Rng& rng, Eigen::Index np, Eigen::Index nq) {
  OverlapLabels l;
  l.overlap_p = MatrixXd::Zero(np, nq);
  l.overlap_q = MatrixXd::Zero(nq, np);
  for (MatrixXd* o : {&l.overlap_p, &l.overlap_q}) {
    for (Eigen::Index i = 0; i < o->size(); ++i) {
      const double u = rng.uniform();
      o->data()[i] = u < 0.35 ? rng.uniform(0.1, 1.0) : (u < 0.45 ? rng.uniform(0.01, 0.09) : 0.0);
    }
  }
  return l;
}

inline std::vector<double> flatten(const FeatureMatrix& a, const FeatureMatrix& b) {
  std::vector<double> v(a.data(), a.data() + a.size());
  v.insert(v.end(), b.data(), b.data() + b.size());
  return v;
}

/// True when no pair distance lies within `margin` of either circle-loss margin.
inline bool clear_of_hinges(const FeatureMatrix& h_p, const FeatureMatrix& h_q, const CircleLossConfig& cfg,
                            double margin) {
  for (Eigen::Index i = 0; i < h_p.rows(); ++i) {
    for (Eigen::Index j = 0; j < h_q.rows(); ++j) {
      const double d = (h_p.row(i) - h_q.row(j)).norm();
      if (std::abs(d - cfg.delta_p) < margin || std::abs(d - cfg.delta_n) < margin) return false;
    }
  }
  return true;
}

inline double circle_trial(Rng& rng, bool overlap_aware) {
  const Eigen::Index np = 8, nq = 8, d = 16;
  const CircleLossConfig cfg;
  FeatureMatrix h_p, h_q;
  do {
    h_p = random_features(rng, np, d, 1.0).rowwise().normalized();
    h_q = random_features(rng, nq, d, 1.0).rowwise().normalized();
  } while (!clear_of_hinges(h_p, h_q, cfg, 1e-3));
  const OverlapLabels labels = random_overlaps(rng, np, nq);
  auto loss = [&](const FeatureMatrix& a, const FeatureMatrix& b) {
    return overlap_aware ? overlap_aware_circle_loss(a, b, labels, cfg) : vanilla_circle_loss(a, b, labels, cfg);
  };
  const FeatureLoss r = loss(h_p, h_q);
  const auto numeric = central_differences(flatten(h_p, h_q), [&](std::span<const double> x) {
    const FeatureMatrix a = Eigen::Map<const FeatureMatrix>(x.data(), np, d);
    const FeatureMatrix b = Eigen::Map<const FeatureMatrix>(x.data() + np * d, nq, d);
    return loss(a, b).loss;
  }, 1e-4);
  return max_relative_error(flatten(r.grad_p, r.grad_q), numeric);
}

inline double point_matching_trial(Rng& rng) {
  const auto n = static_cast<Eigen::Index>(3 + rng.below(5));
  const auto m = static_cast<Eigen::Index>(3 + rng.below(5));
  MatrixXd scores(n + 1, m + 1);
  for (Eigen::Index i = 0; i < scores.size(); ++i) scores.data()[i] = rng.normal();
  PatchMatchLabels gt;
  std::vector<char> used(static_cast<std::size_t>(m), 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto j = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(m)));
    if (rng.uniform() < 0.6 && !used[static_cast<std::size_t>(j)]) {
      gt.matches.emplace_back(i, j);
      used[static_cast<std::size_t>(j)] = 1;
    } else {
      gt.unmatched_src.push_back(i);
    }
  }
  for (Eigen::Index j = 0; j < m; ++j) {
    if (!used[static_cast<std::size_t>(j)]) gt.unmatched_dst.push_back(j);
  }
  constexpr int kIterations = 50;
  const AssignmentLoss r = point_matching_loss_from_scores(scores, kIterations, gt);
  std::vector<double> x(scores.data(), scores.data() + scores.size());
  const auto numeric = central_differences(x, [&](std::span<const double> v) {
    const MatrixXd s = Eigen::Map<const MatrixXd>(v.data(), n + 1, m + 1);
    return point_matching_loss_from_scores(s, kIterations, gt).loss;
  }, 1e-5);
  return max_relative_error(std::span<const double>(r.gradient.data(), static_cast<std::size_t>(r.gradient.size())),
                            numeric);
}

inline double cross_entropy_trial(Rng& rng) {
  const auto n = static_cast<Eigen::Index>(4 + rng.below(8));
  VectorXd y(n), g = VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) y(i) = 2.0 * rng.normal();
  g(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)))) = 1.0;
  g(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)))) = 1.0;
  const VectorXd d = softmax_ce_gradient_demo(y, g);
  std::vector<double> x(y.data(), y.data() + n);
  const auto numeric = central_differences(x, [&](std::span<const double> v) {
    return multi_label_cross_entropy(Eigen::Map<const VectorXd>(v.data(), n), g).loss;
  }, 1e-5);
  return max_relative_error(std::span<const double>(d.data(), static_cast<std::size_t>(n)), numeric);
}

}  // namespace detail

/// Finite-difference checks of every analytic loss gradient.
inline std::vector<GradcheckEntry> run_gradcheck(std::uint64_t seed, int trials) {
  if (trials < 1) throw Error(ErrorKind::Config, "trials must be >= 1");
  std::vector<GradcheckEntry> out{{"overlap_aware_circle", trials, 0.0, 1e-4},
                                  {"vanilla_circle", trials, 0.0, 1e-4},
                                  {"point_matching", trials, 0.0, 1e-4},
                                  {"cross_entropy", trials, 0.0, 1e-4}};
  for (int t = 0; t < trials; ++t) {
    Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(t));
    out[0].max_relative_error = std::max(out[0].max_relative_error, detail::circle_trial(rng, true));
    out[1].max_relative_error = std::max(out[1].max_relative_error, detail::circle_trial(rng, false));
    out[2].max_relative_error = std::max(out[2].max_relative_error, detail::point_matching_trial(rng));
    out[3].max_relative_error = std::max(out[3].max_relative_error, detail::cross_entropy_trial(rng));
  }
  return out;
}

}  // namespace georeg
