#pragma once

#include "georeg/core.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace georeg {

struct SuperpointCorrespondence {
  std::size_t src;  // row in P-hat
  std::size_t dst;  // row in Q-hat
  double score;
};

using SuperpointCorrespondences = std::vector<SuperpointCorrespondence>;

template <typename Derived>
FeatureMatrix normalize_rows_to_sphere(const Eigen::MatrixBase<Derived>& h) {
  FeatureMatrix out = h.template cast<double>();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double norm = out.row(r).norm();
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      throw Error(ErrorKind::InvalidInput, "cannot normalize zero or non-finite row " + std::to_string(r));
    }
    out.row(r) /= norm;
  }
  return out;
}

/// s_ij = exp(-|h_i - h_j|^2) for unit rows.
inline MatrixXd gaussian_correlation(const FeatureMatrix& h_p, const FeatureMatrix& h_q) {
  if (h_p.cols() != h_q.cols()) throw Error(ErrorKind::InvalidInput, "feature widths differ");
  MatrixXd s(h_p.rows(), h_q.rows());
  for (Eigen::Index i = 0; i < h_p.rows(); ++i) {
    for (Eigen::Index j = 0; j < h_q.rows(); ++j) s(i, j) = std::exp(-(h_p.row(i) - h_q.row(j)).squaredNorm());
  }
  return s;
}

/// s_ij * s_ij / (row_i sum * col_j sum).
inline MatrixXd dual_normalize(const MatrixXd& s) {
  const VectorXd row_sum = s.rowwise().sum();
  const Eigen::RowVectorXd col_sum = s.colwise().sum();
  if (!(row_sum.size() == 0 || row_sum.minCoeff() > 0.0) || !(col_sum.size() == 0 || col_sum.minCoeff() > 0.0)) {
    throw Error(ErrorKind::Numerical, "dual normalization needs positive row and column sums");
  }
  MatrixXd out(s.rows(), s.cols());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    for (Eigen::Index j = 0; j < s.cols(); ++j) out(i, j) = (s(i, j) / row_sum(i)) * (s(i, j) / col_sum(j));
  }
  return out;
}

inline bool correspondence_before(const SuperpointCorrespondence& a, const SuperpointCorrespondence& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.src != b.src) return a.src < b.src;
  return a.dst < b.dst;
}

/// The `count` globally largest entries, descending, ties by (row, column).
inline SuperpointCorrespondences select_topk_correspondences(const MatrixXd& s, std::size_t count) {
  if (count < 1) throw Error(ErrorKind::Config, "N_c must be >= 1");
  SuperpointCorrespondences all;
  all.reserve(static_cast<std::size_t>(s.size()));
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    for (Eigen::Index j = 0; j < s.cols(); ++j) {
      all.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(j), s(i, j)});
    }
  }
  const std::size_t keep = std::min(count, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(), correspondence_before);
  all.resize(keep);
  return all;
}

/// Normalize, correlate, dual-normalize and keep the top `count` pairs.
template <typename DerivedP, typename DerivedQ>
SuperpointCorrespondences match_superpoints(const Eigen::MatrixBase<DerivedP>& h_p,
                                            const Eigen::MatrixBase<DerivedQ>& h_q, std::size_t count) {
  const FeatureMatrix up = normalize_rows_to_sphere(h_p);
  const FeatureMatrix uq = normalize_rows_to_sphere(h_q);
  return select_topk_correspondences(dual_normalize(gaussian_correlation(up, uq)), count);
}

}  // namespace georeg
