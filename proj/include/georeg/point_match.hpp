#pragma once

#include "georeg/core.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <vector>

namespace georeg {

struct PointCorrespondence {
  std::size_t src;  // global index into the dense source cloud
  std::size_t dst;  // global index into the dense target cloud
  double confidence;

  friend bool operator==(const PointCorrespondence&, const PointCorrespondence&) = default;
};

using PointCorrespondences = std::vector<PointCorrespondence>;

/// C = F_P F_Q^T / sqrt(d).
template <typename DerivedP, typename DerivedQ>
MatrixXd patch_cost_matrix(const Eigen::MatrixBase<DerivedP>& f_p, const Eigen::MatrixBase<DerivedQ>& f_q) {
  if (f_p.cols() != f_q.cols()) throw Error(ErrorKind::InvalidInput, "patch feature widths differ");
  if (f_p.cols() < 1) throw Error(ErrorKind::InvalidInput, "patch features need width >= 1");
  if (f_p.rows() < 1 || f_q.rows() < 1) throw Error(ErrorKind::InvalidInput, "patches must be nonempty");
  return (f_p.template cast<double>() * f_q.template cast<double>().transpose()) /
         std::sqrt(static_cast<double>(f_p.cols()));
}

/// Appends one row and one column filled with alpha.
inline MatrixXd augment_with_dustbin(const MatrixXd& cost, double alpha) {
  if (!std::isfinite(alpha)) throw Error(ErrorKind::Config, "dustbin parameter must be finite");
  MatrixXd out = MatrixXd::Constant(cost.rows() + 1, cost.cols() + 1, alpha);
  out.topLeftCorner(cost.rows(), cost.cols()) = cost;
  return out;
}

/// Soft assignment over an augmented (n+1) x (m+1) score matrix.
struct AssignmentMatrix {
  MatrixXd log_z_bar;  // log of Z-bar
  MatrixXd z_bar;
  Eigen::Index n = 0, m = 0;

  /// Z: Z-bar without its dustbin row and column.
  MatrixXd z() const { return z_bar.topLeftCorner(n, m); }
};

/// Log of the marginals alpha (rows) and beta (columns) of the augmented
/// problem: 1/(n+m) for real rows/columns, m/(n+m) and n/(n+m) for the dustbins.
inline std::pair<VectorXd, VectorXd> sinkhorn_log_marginals(Eigen::Index n, Eigen::Index m) {
  const double total = static_cast<double>(n + m);
  VectorXd log_a = VectorXd::Constant(n + 1, -std::log(total));
  VectorXd log_b = VectorXd::Constant(m + 1, -std::log(total));
  log_a(n) = std::log(static_cast<double>(m) / total);
  log_b(m) = std::log(static_cast<double>(n) / total);
  return {log_a, log_b};
}

namespace detail {

inline double log_sum_exp(const double* values, std::size_t count, std::size_t stride) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < count; ++i) mx = std::max(mx, values[i * stride]);
  if (!std::isfinite(mx)) return mx;
  double sum = 0.0;
  for (std::size_t i = 0; i < count; ++i) sum += std::exp(values[i * stride] - mx);
  return mx + std::log(sum);
}

}  // namespace detail

/// Dual potentials after every iteration, kept for reverse-mode differentiation.
struct SinkhornTrace {
  std::vector<VectorXd> u;  // u[t] after iteration t+1
  std::vector<VectorXd> v;
};

/// Log-domain Sinkhorn from zero potentials:
///   u_j = log alpha_j - logsumexp_k(c_jk + v_k)
///   v_k = log beta_k  - logsumexp_j(c_jk + u_j)
/// followed by z_jk = exp(c_jk + u_j + v_k) * (n + m).
inline AssignmentMatrix sinkhorn(const MatrixXd& augmented, int iterations, SinkhornTrace* trace = nullptr) {
  if (iterations < 1) throw Error(ErrorKind::Config, "Sinkhorn needs at least one iteration");
  if (augmented.rows() < 2 || augmented.cols() < 2) {
    throw Error(ErrorKind::InvalidInput, "augmented matrix must be at least 2x2");
  }
  if (!augmented.allFinite()) throw Error(ErrorKind::InvalidInput, "score matrix has non-finite entries");
  const Eigen::Index rows = augmented.rows();
  const Eigen::Index cols = augmented.cols();
  const Eigen::Index n = rows - 1;
  const Eigen::Index m = cols - 1;
  const auto [log_a, log_b] = sinkhorn_log_marginals(n, m);

  // Both sweeps read contiguous rows: c for the row update, its transpose for the column update.
  const RowMatrix<double> c = augmented;
  const RowMatrix<double> ct = augmented.transpose();
  VectorXd u = VectorXd::Zero(rows);
  VectorXd v = VectorXd::Zero(cols);
  Eigen::ArrayXd scratch(std::max(rows, cols));
  auto lse = [&scratch](Eigen::Index count) {
    auto s = scratch.head(count);
    const double mx = s.maxCoeff();
    return mx + std::log((s - mx).exp().sum());
  };
  if (trace) {
    trace->u.clear();
    trace->v.clear();
  }
  for (int t = 0; t < iterations; ++t) {
    for (Eigen::Index j = 0; j < rows; ++j) {
      scratch.head(cols) = c.row(j).transpose().array() + v.array();
      u(j) = log_a(j) - lse(cols);
    }
    for (Eigen::Index k = 0; k < cols; ++k) {
      scratch.head(rows) = ct.row(k).transpose().array() + u.array();
      v(k) = log_b(k) - lse(rows);
    }
    if (trace) {
      trace->u.push_back(u);
      trace->v.push_back(v);
    }
  }
  AssignmentMatrix out;
  out.n = n;
  out.m = m;
  const double log_total = std::log(static_cast<double>(n + m));
  out.log_z_bar.resize(rows, cols);
  for (Eigen::Index j = 0; j < rows; ++j) {
    for (Eigen::Index k = 0; k < cols; ++k) out.log_z_bar(j, k) = c(j, k) + u(j) + v(k) + log_total;
  }
  out.z_bar = out.log_z_bar.array().exp().matrix();
  if (!out.z_bar.allFinite()) throw Error(ErrorKind::Numerical, "Sinkhorn produced non-finite values");
  return out;
}

/// Largest deviation of the row/column sums of Z-bar from [1..1, m] and [1..1, n].
inline double sinkhorn_marginal_residual(const AssignmentMatrix& z) {
  double worst = 0.0;
  const VectorXd rows = z.z_bar.rowwise().sum();
  const Eigen::RowVectorXd cols = z.z_bar.colwise().sum();
  for (Eigen::Index j = 0; j < rows.size(); ++j) {
    const double target = j < z.n ? 1.0 : static_cast<double>(z.m);
    worst = std::max(worst, std::abs(rows(j) - target));
  }
  for (Eigen::Index k = 0; k < cols.size(); ++k) {
    const double target = k < z.m ? 1.0 : static_cast<double>(z.n);
    worst = std::max(worst, std::abs(cols(k) - target));
  }
  return worst;
}

namespace detail {

/// Indices of the k largest entries of a strided sequence, ties to the lower index.
inline std::vector<Eigen::Index> top_k_indices(const double* values, Eigen::Index count, Eigen::Index stride, int k) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(count));
  for (Eigen::Index i = 0; i < count; ++i) idx[static_cast<std::size_t>(i)] = i;
  const auto keep = std::min<std::size_t>(static_cast<std::size_t>(k), idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(keep), idx.end(),
                    [&](Eigen::Index a, Eigen::Index b) {
                      const double va = values[a * stride], vb = values[b * stride];
                      return va != vb ? va > vb : a < b;
                    });
  idx.resize(keep);
  return idx;
}

}  // namespace detail

/// Pairs that are among the k largest of their row and of their column with
/// confidence >= min_confidence, mapped to global indices. Sorted by (src, dst).
inline PointCorrespondences mutual_topk_extract(const MatrixXd& z, int k, double min_confidence,
                                                std::span<const std::size_t> patch_p,
                                                std::span<const std::size_t> patch_q) {
  if (k < 1) throw Error(ErrorKind::Config, "mutual top-k needs k >= 1");
  if (static_cast<std::size_t>(z.rows()) != patch_p.size() || static_cast<std::size_t>(z.cols()) != patch_q.size()) {
    throw Error(ErrorKind::InvalidInput, "assignment shape does not match patch sizes");
  }
  const Eigen::Index n = z.rows(), m = z.cols();
  // Column-major storage: column j is contiguous, row i has stride n.
  const MatrixXd zc = z;
  std::vector<char> in_col(static_cast<std::size_t>(n * m), 0);
  for (Eigen::Index j = 0; j < m; ++j) {
    for (auto i : detail::top_k_indices(zc.data() + j * n, n, 1, k)) in_col[static_cast<std::size_t>(i * m + j)] = 1;
  }
  PointCorrespondences out;
  for (Eigen::Index i = 0; i < n; ++i) {
    auto row_top = detail::top_k_indices(zc.data() + i, m, n, k);
    std::sort(row_top.begin(), row_top.end());
    for (auto j : row_top) {
      if (!in_col[static_cast<std::size_t>(i * m + j)] || !(zc(i, j) >= min_confidence)) continue;
      out.push_back({patch_p[static_cast<std::size_t>(i)], patch_q[static_cast<std::size_t>(j)], zc(i, j)});
    }
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.src != b.src ? a.src < b.src : a.dst < b.dst;
  });
  return out;
}

/// Union of per-patch matches; a pair found by several patches keeps its
/// highest confidence. Sorted by (src, dst).
inline PointCorrespondences merge_correspondences(std::span<const PointCorrespondences> per_patch) {
  std::map<std::pair<std::size_t, std::size_t>, double> best;
  for (const auto& list : per_patch) {
    for (const auto& c : list) {
      auto [it, inserted] = best.try_emplace({c.src, c.dst}, c.confidence);
      if (!inserted) it->second = std::max(it->second, c.confidence);
    }
  }
  PointCorrespondences out;
  out.reserve(best.size());
  for (const auto& [key, conf] : best) out.push_back({key.first, key.second, conf});
  return out;
}

struct PointMatchConfig {
  int sinkhorn_iterations = 100;
  double dustbin_alpha = 1.0;
  int mutual_k = 1;
  double min_confidence = 0.05;

  void validate() const {
    if (sinkhorn_iterations < 1) throw Error(ErrorKind::Config, "sinkhorn_iterations must be >= 1");
    if (!std::isfinite(dustbin_alpha)) throw Error(ErrorKind::Config, "dustbin_alpha must be finite");
    if (mutual_k < 1) throw Error(ErrorKind::Config, "mutual_k must be >= 1");
    if (!(min_confidence >= 0.0)) throw Error(ErrorKind::Config, "min_confidence must be >= 0");
  }
};

/// Dense matches for one superpoint correspondence.
template <typename DerivedP, typename DerivedQ>
PointCorrespondences match_patch(const Eigen::MatrixBase<DerivedP>& f_p, const Eigen::MatrixBase<DerivedQ>& f_q,
                                 std::span<const std::size_t> patch_p, std::span<const std::size_t> patch_q,
                                 const PointMatchConfig& cfg) {
  const MatrixXd augmented = augment_with_dustbin(patch_cost_matrix(f_p, f_q), cfg.dustbin_alpha);
  const AssignmentMatrix assignment = sinkhorn(augmented, cfg.sinkhorn_iterations);
  return mutual_topk_extract(assignment.z(), cfg.mutual_k, cfg.min_confidence, patch_p, patch_q);
}

}  // namespace georeg
