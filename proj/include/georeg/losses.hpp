#pragma once

#include "georeg/core.hpp"
#include "georeg/point_match.hpp"

#include <cmath>
#include <span>
#include <utility>
#include <vector>

namespace georeg {

/// Patch-pair overlap ratios for both directions. overlap_p(i, j) is the
/// fraction of points of P-patch i matched into Q-patch j; overlap_q(j, i) the
/// same with the roles swapped.
struct OverlapLabels {
  MatrixXd overlap_p;  // |P-hat| x |Q-hat|
  MatrixXd overlap_q;  // |Q-hat| x |P-hat|
};

struct CircleLossConfig {
  double delta_p = 0.1;
  double delta_n = 1.4;
  double gamma = 10.0;
  double positive_overlap = 0.1;

  void validate() const {
    if (!(delta_n > delta_p)) throw Error(ErrorKind::Config, "delta_n must exceed delta_p");
    if (!(gamma > 0.0) || !std::isfinite(gamma)) throw Error(ErrorKind::Config, "gamma must be > 0");
    if (!(positive_overlap > 0.0 && positive_overlap <= 1.0)) {
      throw Error(ErrorKind::Config, "positive_overlap must be in (0, 1]");
    }
  }
};

struct FeatureLoss {
  double loss = 0.0;
  FeatureMatrix grad_p;
  FeatureMatrix grad_q;
  std::size_t anchors_p = 0;
  std::size_t anchors_q = 0;

  bool no_anchors() const noexcept { return anchors_p == 0 && anchors_q == 0; }
};

namespace detail {

inline double log_sum_exp(std::span<const double> v) {
  return log_sum_exp(v.data(), v.size(), 1);
}

inline double softplus(double s) {
  if (s == -std::numeric_limits<double>::infinity()) return 0.0;
  return s > 0.0 ? s + std::log1p(std::exp(-s)) : std::log1p(std::exp(s));
}

inline double sigmoid(double s) {
  if (s >= 0.0) return 1.0 / (1.0 + std::exp(-s));
  const double e = std::exp(s);
  return e / (1.0 + e);
}

/// Adds scale * dL/dd to the gradients of rows a_i and b_j of d = |a_i - b_j|.
inline void add_distance_gradient(const FeatureMatrix& a, const FeatureMatrix& b, Eigen::Index i, Eigen::Index j,
                                  double dist, double dl_dd, FeatureMatrix& ga, FeatureMatrix& gb) {
  if (!(dist > 0.0) || dl_dd == 0.0) return;
  const Eigen::RowVectorXd diff = (a.row(i) - b.row(j)) * (dl_dd / dist);
  ga.row(i) += diff;
  gb.row(j) -= diff;
}

/// Mean per-anchor circle loss with anchors taken from rows of `a`.
inline std::size_t circle_loss_one_side(const FeatureMatrix& a, const FeatureMatrix& b, const MatrixXd& dist,
                                        const MatrixXd& overlap, const CircleLossConfig& cfg, bool weight_by_overlap,
                                        double scale, double& loss, FeatureMatrix& ga, FeatureMatrix& gb) {
  std::vector<Eigen::Index> anchors;
  for (Eigen::Index i = 0; i < overlap.rows(); ++i) {
    if ((overlap.row(i).array() >= cfg.positive_overlap).any()) anchors.push_back(i);
  }
  if (anchors.empty()) return 0;
  const double per_anchor = scale / static_cast<double>(anchors.size());
  std::vector<Eigen::Index> pos, neg;
  std::vector<double> pos_exp, neg_exp;
  for (auto i : anchors) {
    pos.clear();
    neg.clear();
    pos_exp.clear();
    neg_exp.clear();
    for (Eigen::Index j = 0; j < overlap.cols(); ++j) {
      const double o = overlap(i, j);
      const double d = dist(i, j);
      if (o >= cfg.positive_overlap) {
        const double lambda = weight_by_overlap ? std::sqrt(o) : 1.0;
        const double gap = std::max(0.0, d - cfg.delta_p);
        pos.push_back(j);
        pos_exp.push_back(lambda * cfg.gamma * gap * gap);
      } else if (o == 0.0) {
        const double gap = std::max(0.0, cfg.delta_n - d);
        neg.push_back(j);
        neg_exp.push_back(cfg.gamma * gap * gap);
      }
    }
    if (neg.empty()) continue;
    const double lse_p = log_sum_exp(pos_exp);
    const double lse_n = log_sum_exp(neg_exp);
    const double s = lse_p + lse_n;
    loss += per_anchor * softplus(s);
    const double outer = per_anchor * sigmoid(s);
    for (std::size_t t = 0; t < pos.size(); ++t) {
      const Eigen::Index j = pos[t];
      const double d = dist(i, j);
      const double lambda = weight_by_overlap ? std::sqrt(overlap(i, j)) : 1.0;
      const double dl_dd = outer * std::exp(pos_exp[t] - lse_p) * 2.0 * lambda * cfg.gamma * std::max(0.0, d - cfg.delta_p);
      add_distance_gradient(a, b, i, j, d, dl_dd, ga, gb);
    }
    for (std::size_t t = 0; t < neg.size(); ++t) {
      const Eigen::Index j = neg[t];
      const double d = dist(i, j);
      const double dl_dd = -outer * std::exp(neg_exp[t] - lse_n) * 2.0 * cfg.gamma * std::max(0.0, cfg.delta_n - d);
      add_distance_gradient(a, b, i, j, d, dl_dd, ga, gb);
    }
  }
  return anchors.size();
}

inline FeatureLoss circle_loss_impl(const FeatureMatrix& h_p, const FeatureMatrix& h_q, const OverlapLabels& labels,
                                    const CircleLossConfig& cfg, bool weight_by_overlap) {
  cfg.validate();
  if (h_p.cols() != h_q.cols()) throw Error(ErrorKind::InvalidInput, "feature widths differ");
  if (!h_p.allFinite() || !h_q.allFinite()) throw Error(ErrorKind::InvalidInput, "features must be finite");
  if (labels.overlap_p.rows() != h_p.rows() || labels.overlap_p.cols() != h_q.rows() ||
      labels.overlap_q.rows() != h_q.rows() || labels.overlap_q.cols() != h_p.rows()) {
    throw Error(ErrorKind::InvalidInput, "overlap matrices do not match feature counts");
  }
  for (const MatrixXd* o : {&labels.overlap_p, &labels.overlap_q}) {
    if (o->size() > 0 && (!o->allFinite() || o->minCoeff() < 0.0 || o->maxCoeff() > 1.0)) {
      throw Error(ErrorKind::InvalidInput, "overlap ratios must lie in [0, 1]");
    }
  }
  MatrixXd dist(h_p.rows(), h_q.rows());
  for (Eigen::Index i = 0; i < h_p.rows(); ++i) {
    for (Eigen::Index j = 0; j < h_q.rows(); ++j) dist(i, j) = (h_p.row(i) - h_q.row(j)).norm();
  }
  const MatrixXd dist_t = dist.transpose();
  FeatureLoss out;
  out.grad_p = FeatureMatrix::Zero(h_p.rows(), h_p.cols());
  out.grad_q = FeatureMatrix::Zero(h_q.rows(), h_q.cols());
  out.anchors_p = circle_loss_one_side(h_p, h_q, dist, labels.overlap_p, cfg, weight_by_overlap, 0.5, out.loss,
                                       out.grad_p, out.grad_q);
  out.anchors_q = circle_loss_one_side(h_q, h_p, dist_t, labels.overlap_q, cfg, weight_by_overlap, 0.5, out.loss,
                                       out.grad_q, out.grad_p);
  return out;
}

}  // namespace detail

/// Circle loss whose positive terms are weighted by sqrt(overlap); averaged
/// over both directions. Returns the gradient with respect to both feature sets.
inline FeatureLoss overlap_aware_circle_loss(const FeatureMatrix& h_p, const FeatureMatrix& h_q,
                                             const OverlapLabels& labels, const CircleLossConfig& cfg = {}) {
  return detail::circle_loss_impl(h_p, h_q, labels, cfg, true);
}

/// Same loss with every positive weighted equally.
inline FeatureLoss vanilla_circle_loss(const FeatureMatrix& h_p, const FeatureMatrix& h_q,
                                       const OverlapLabels& labels, const CircleLossConfig& cfg = {}) {
  return detail::circle_loss_impl(h_p, h_q, labels, cfg, false);
}

/// Ground truth for one patch pair in local indices: matched pairs, unmatched
/// source rows (assigned to the column dustbin) and unmatched target columns.
struct PatchMatchLabels {
  std::vector<std::pair<Eigen::Index, Eigen::Index>> matches;
  std::vector<Eigen::Index> unmatched_src;
  std::vector<Eigen::Index> unmatched_dst;
};

struct AssignmentLoss {
  double loss = 0.0;
  MatrixXd gradient;  // same shape as the augmented matrix
  bool floored = false;
};

inline constexpr double kLogFloor = 1e-12;

namespace detail {

template <typename Fn>
void for_each_labeled_cell(const PatchMatchLabels& gt, Eigen::Index n, Eigen::Index m, Fn&& fn) {
  auto check = [](Eigen::Index v, Eigen::Index hi) {
    if (v < 0 || v >= hi) throw Error(ErrorKind::InvalidInput, "ground-truth index out of range");
  };
  for (const auto& [x, y] : gt.matches) {
    check(x, n);
    check(y, m);
    fn(x, y);
  }
  for (auto x : gt.unmatched_src) {
    check(x, n);
    fn(x, m);
  }
  for (auto y : gt.unmatched_dst) {
    check(y, m);
    fn(n, y);
  }
}

}  // namespace detail

/// -sum log z-bar over matched cells and dustbin cells of unmatched points.
/// The gradient is with respect to the entries of z-bar; entries below the
/// floor are clamped and receive zero gradient. Callers average over the
/// sampled patch pairs.
inline AssignmentLoss point_matching_loss(const AssignmentMatrix& z, const PatchMatchLabels& gt) {
  AssignmentLoss out;
  out.gradient = MatrixXd::Zero(z.z_bar.rows(), z.z_bar.cols());
  detail::for_each_labeled_cell(gt, z.n, z.m, [&](Eigen::Index r, Eigen::Index c) {
    const double v = z.z_bar(r, c);
    if (!(v > kLogFloor)) {
      out.floored = true;
      out.loss -= std::log(kLogFloor);
      return;
    }
    out.loss -= std::log(v);
    out.gradient(r, c) -= 1.0 / v;
  });
  return out;
}

/// Same negative log-likelihood evaluated from the augmented score matrix,
/// with the gradient taken through every Sinkhorn iteration.
inline AssignmentLoss point_matching_loss_from_scores(const MatrixXd& augmented, int iterations,
                                                      const PatchMatchLabels& gt) {
  SinkhornTrace trace;
  const AssignmentMatrix z = sinkhorn(augmented, iterations, &trace);
  const Eigen::Index rows = augmented.rows(), cols = augmented.cols();
  MatrixXd g_out = MatrixXd::Zero(rows, cols);
  AssignmentLoss out;
  detail::for_each_labeled_cell(gt, z.n, z.m, [&](Eigen::Index r, Eigen::Index c) {
    out.loss -= z.log_z_bar(r, c);
    g_out(r, c) -= 1.0;
  });

  MatrixXd grad = g_out;
  VectorXd gu = g_out.rowwise().sum();
  VectorXd gv = g_out.colwise().sum().transpose();
  std::vector<double> p(static_cast<std::size_t>(std::max(rows, cols)));
  const VectorXd zero_v = VectorXd::Zero(cols);
  for (int t = iterations - 1; t >= 0; --t) {
    const VectorXd& u = trace.u[static_cast<std::size_t>(t)];
    const VectorXd& v_prev = t > 0 ? trace.v[static_cast<std::size_t>(t - 1)] : zero_v;
    // v_k = log b_k - logsumexp_j(c_jk + u_j)
    for (Eigen::Index k = 0; k < cols; ++k) {
      for (Eigen::Index j = 0; j < rows; ++j) p[static_cast<std::size_t>(j)] = augmented(j, k) + u(j);
      const double lse = detail::log_sum_exp(p.data(), static_cast<std::size_t>(rows), 1);
      for (Eigen::Index j = 0; j < rows; ++j) {
        const double w = gv(k) * std::exp(p[static_cast<std::size_t>(j)] - lse);
        grad(j, k) -= w;
        gu(j) -= w;
      }
    }
    // u_j = log a_j - logsumexp_k(c_jk + v_prev_k)
    VectorXd gv_prev = VectorXd::Zero(cols);
    for (Eigen::Index j = 0; j < rows; ++j) {
      for (Eigen::Index k = 0; k < cols; ++k) p[static_cast<std::size_t>(k)] = augmented(j, k) + v_prev(k);
      const double lse = detail::log_sum_exp(p.data(), static_cast<std::size_t>(cols), 1);
      for (Eigen::Index k = 0; k < cols; ++k) {
        const double w = gu(j) * std::exp(p[static_cast<std::size_t>(k)] - lse);
        grad(j, k) -= w;
        gv_prev(k) -= w;
      }
    }
    gv = gv_prev;
    gu.setZero();
  }
  out.gradient = std::move(grad);
  return out;
}

struct CrossEntropyResult {
  double loss = 0.0;
  VectorXd probabilities;
  VectorXd gradient;  // with respect to the scores
};

/// Multi-label softmax cross-entropy -sum_i g_i log softmax(y)_i and its
/// gradient d_i = (sum_j g_j) z_i - g_i.
inline CrossEntropyResult multi_label_cross_entropy(const VectorXd& scores, const VectorXd& labels) {
  if (scores.size() != labels.size() || scores.size() == 0) {
    throw Error(ErrorKind::InvalidInput, "scores and labels must be nonempty and equally long");
  }
  if (!scores.allFinite() || !labels.allFinite() || labels.minCoeff() < 0.0) {
    throw Error(ErrorKind::InvalidInput, "labels must be finite and nonnegative");
  }
  const double lse = detail::log_sum_exp(scores.data(), static_cast<std::size_t>(scores.size()), 1);
  CrossEntropyResult out;
  out.probabilities = (scores.array() - lse).exp().matrix();
  out.loss = -(labels.array() * (scores.array() - lse)).sum();
  out.gradient = labels.sum() * out.probabilities - labels;
  return out;
}

/// Gradient of the multi-label cross-entropy; a positive class whose
/// probability exceeds g_i / sum(g) is pushed down.
inline VectorXd softmax_ce_gradient_demo(const VectorXd& scores, const VectorXd& labels) {
  if (labels.size() == 0 || !(labels.maxCoeff() > 0.0)) {
    throw Error(ErrorKind::InvalidInput, "labels need at least one positive class");
  }
  return multi_label_cross_entropy(scores, labels).gradient;
}

}  // namespace georeg
