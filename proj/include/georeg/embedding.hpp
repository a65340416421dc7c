#pragma once

#include "georeg/core.hpp"
#include "georeg/kdtree.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace georeg {

struct EmbeddingConfig {
  int d_t = 128;
  double sigma_d = 0.2;                    // meters
  double sigma_a = 15.0 * kDegToRad;       // radians
  int k = 3;                               // neighbours per superpoint for the angular term

  void validate() const {
    if (d_t <= 0 || d_t % 2 != 0) throw Error(ErrorKind::Config, "d_t must be a positive even integer");
    if (!(sigma_d > 0.0)) throw Error(ErrorKind::Config, "sigma_d must be > 0");
    if (!(sigma_a > 0.0)) throw Error(ErrorKind::Config, "sigma_a must be > 0");
    if (k < 1) throw Error(ErrorKind::Config, "k must be >= 1");
  }
};

/// Dense rank-3 tensor, last index fastest.
template <typename Scalar>
struct Tensor3 {
  std::size_t d0 = 0, d1 = 0, d2 = 0;
  std::vector<Scalar> data;

  Tensor3() = default;
  Tensor3(std::size_t a, std::size_t b, std::size_t c) : d0(a), d1(b), d2(c), data(a * b * c, Scalar(0)) {}

  Scalar* at(std::size_t i, std::size_t j) { return data.data() + (i * d1 + j) * d2; }
  const Scalar* at(std::size_t i, std::size_t j) const { return data.data() + (i * d1 + j) * d2; }
  Scalar& operator()(std::size_t i, std::size_t j, std::size_t c) { return at(i, j)[c]; }
  Scalar operator()(std::size_t i, std::size_t j, std::size_t c) const { return at(i, j)[c]; }
};

/// r_{i,j} for all superpoint pairs: |P| x |P| x d_t.
template <typename Scalar>
using GeoEmbeddingTensor = Tensor3<Scalar>;

/// Band divisors 10000^{2k/d_t}, k = 0 .. d_t/2 - 1.
inline std::vector<double> sinusoid_divisors(int d_t) {
  std::vector<double> div(static_cast<std::size_t>(d_t / 2));
  for (int k = 0; 2 * k < d_t; ++k) div[static_cast<std::size_t>(k)] = std::pow(10000.0, 2.0 * k / d_t);
  return div;
}

inline void sinusoidal_embed_into(double value, double temperature, const std::vector<double>& divisors, double* out) {
  const double base = value / temperature;
  for (std::size_t k = 0; k < divisors.size(); ++k) {
    const double arg = base / divisors[k];
    out[2 * k] = std::sin(arg);
    out[2 * k + 1] = std::cos(arg);
  }
}

/// Writes the transformer sinusoid of value/temperature into out[0..d_t).
inline void sinusoidal_embed_into(double value, double temperature, int d_t, double* out) {
  sinusoidal_embed_into(value, temperature, sinusoid_divisors(d_t), out);
}

inline std::vector<double> sinusoidal_embed(double value, double temperature, int d_t) {
  if (d_t <= 0 || d_t % 2 != 0) throw Error(ErrorKind::Config, "d_t must be a positive even integer");
  if (!(temperature > 0.0)) throw Error(ErrorKind::Config, "temperature must be > 0");
  std::vector<double> out(static_cast<std::size_t>(d_t));
  sinusoidal_embed_into(value, temperature, d_t, out.data());
  return out;
}

/// Angle between u and v in [0, pi]; zero when either vector vanishes.
inline double vector_angle(const Eigen::Vector3d& u, const Eigen::Vector3d& v) {
  const double dot = u.dot(v);
  return std::atan2(u.cross(v).norm(), dot == 0.0 ? 0.0 : dot);
}

inline Tensor3<double> pairwise_distance_embedding(const PointCloud& superpoints, const EmbeddingConfig& cfg) {
  cfg.validate();
  const std::size_t n = superpoints.size();
  if (n == 0) throw Error(ErrorKind::InvalidInput, "need at least one superpoint");
  Tensor3<double> out(n, n, static_cast<std::size_t>(cfg.d_t));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double dist = (superpoints.points[i] - superpoints.points[j]).norm();
      sinusoidal_embed_into(dist, cfg.sigma_d, cfg.d_t, out.at(i, j));
    }
  }
  return out;
}

/// k nearest superpoints of each superpoint, excluding itself, ties by index.
inline std::vector<std::vector<std::size_t>> angular_neighbors(const PointCloud& superpoints, int k) {
  const std::size_t n = superpoints.size();
  if (n < static_cast<std::size_t>(k) + 1) {
    throw Error(ErrorKind::Config, "triplet embedding needs at least k+1 superpoints");
  }
  const KdTree tree(superpoints.points);
  std::vector<std::vector<std::size_t>> table(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& nb : tree.knn(superpoints.points[i], static_cast<std::size_t>(k), i)) table[i].push_back(nb.index);
  }
  return table;
}

/// alpha^x_{i,j} for every i, every x in K_i and every j: |P| x |P| x k.
inline Tensor3<double> triplet_angles(const PointCloud& superpoints,
                                      const std::vector<std::vector<std::size_t>>& neighbors) {
  const std::size_t n = superpoints.size();
  const std::size_t k = neighbors.empty() ? 0 : neighbors.front().size();
  Tensor3<double> angles(n, n, k);
  for (std::size_t i = 0; i < n; ++i) {
    const Point3& anchor = superpoints.points[i];
    for (std::size_t j = 0; j < n; ++j) {
      const Eigen::Vector3d to_j = superpoints.points[j] - anchor;
      for (std::size_t x = 0; x < k; ++x) {
        angles(i, j, x) = vector_angle(superpoints.points[neighbors[i][x]] - anchor, to_j);
      }
    }
  }
  return angles;
}

struct TripletAngularEmbedding {
  std::vector<std::vector<std::size_t>> neighbors;
  Tensor3<double> angles;
  /// Row-major (i, j, x, c) flattened: embedding(i, j, x) starts at ((i*n + j)*k + x)*d_t.
  std::vector<double> values;
  std::size_t n = 0, k = 0, d_t = 0;

  const double* at(std::size_t i, std::size_t j, std::size_t x) const { return values.data() + ((i * n + j) * k + x) * d_t; }
};

inline TripletAngularEmbedding triplet_angular_embedding(const PointCloud& superpoints, const EmbeddingConfig& cfg) {
  cfg.validate();
  TripletAngularEmbedding out;
  out.neighbors = angular_neighbors(superpoints, cfg.k);
  out.angles = triplet_angles(superpoints, out.neighbors);
  out.n = superpoints.size();
  out.k = static_cast<std::size_t>(cfg.k);
  out.d_t = static_cast<std::size_t>(cfg.d_t);
  out.values.resize(out.n * out.n * out.k * out.d_t);
  for (std::size_t i = 0; i < out.n; ++i) {
    for (std::size_t j = 0; j < out.n; ++j) {
      for (std::size_t x = 0; x < out.k; ++x) {
        sinusoidal_embed_into(out.angles(i, j, x), cfg.sigma_a, cfg.d_t,
                              out.values.data() + ((i * out.n + j) * out.k + x) * out.d_t);
      }
    }
  }
  return out;
}

/// r_{i,j} = r^D_{i,j} W_D + max_x (r^A_{i,j,x} W_A), max taken per channel.
/// Geometry and sinusoids run in double; the projections run in Scalar.
template <typename Scalar, typename MatD, typename MatA>
GeoEmbeddingTensor<Scalar> geometric_structure_embedding(const PointCloud& superpoints, const EmbeddingConfig& cfg,
                                                         const MatD& w_d, const MatA& w_a) {
  cfg.validate();
  const auto d = static_cast<std::size_t>(cfg.d_t);
  if (static_cast<std::size_t>(w_d.rows()) != d || static_cast<std::size_t>(w_d.cols()) != d ||
      static_cast<std::size_t>(w_a.rows()) != d || static_cast<std::size_t>(w_a.cols()) != d) {
    throw Error(ErrorKind::InvalidInput, "embedding projections must be d_t x d_t");
  }
  const std::size_t n = superpoints.size();
  if (n == 0) throw Error(ErrorKind::InvalidInput, "need at least one superpoint");
  const auto neighbors = angular_neighbors(superpoints, cfg.k);
  const auto k = static_cast<std::size_t>(cfg.k);

  const auto rows = static_cast<Eigen::Index>(n), half = static_cast<Eigen::Index>(d / 2);
  RowMatrix<Scalar> wd_sin(half, static_cast<Eigen::Index>(d)), wd_cos(half, static_cast<Eigen::Index>(d));
  RowMatrix<Scalar> wa_sin(half, static_cast<Eigen::Index>(d)), wa_cos(half, static_cast<Eigen::Index>(d));
  for (Eigen::Index r = 0; r < half; ++r) {
    wd_sin.row(r) = w_d.row(2 * r).template cast<Scalar>();
    wd_cos.row(r) = w_d.row(2 * r + 1).template cast<Scalar>();
    wa_sin.row(r) = w_a.row(2 * r).template cast<Scalar>();
    wa_cos.row(r) = w_a.row(2 * r + 1).template cast<Scalar>();
  }
  const auto divisors = sinusoid_divisors(cfg.d_t);
  GeoEmbeddingTensor<Scalar> out(n, n, d);
  RowMatrix<Scalar> phase(rows, half), accum(rows, static_cast<Eigen::Index>(d)), angular(rows, static_cast<Eigen::Index>(d));
  const auto fill_phase = [&](std::size_t j, double value, double temperature) {
    const double base = value / temperature;
    Scalar* row = phase.row(static_cast<Eigen::Index>(j)).data();
    for (std::size_t c = 0; c < divisors.size(); ++c) row[c] = static_cast<Scalar>(base / divisors[c]);
  };
  const auto project = [&](const RowMatrix<Scalar>& w_sin, const RowMatrix<Scalar>& w_cos) -> RowMatrix<Scalar> {
    RowMatrix<Scalar> r = phase.array().sin().matrix() * w_sin;
    r.noalias() += phase.array().cos().matrix() * w_cos;
    return r;
  };
  for (std::size_t i = 0; i < n; ++i) {
    const Point3& anchor = superpoints.points[i];
    for (std::size_t j = 0; j < n; ++j) fill_phase(j, (superpoints.points[j] - anchor).norm(), cfg.sigma_d);
    accum = project(wd_sin, wd_cos);
    for (std::size_t x = 0; x < k; ++x) {
      const Eigen::Vector3d to_x = superpoints.points[neighbors[i][x]] - anchor;
      for (std::size_t j = 0; j < n; ++j) fill_phase(j, vector_angle(to_x, superpoints.points[j] - anchor), cfg.sigma_a);
      if (x == 0) {
        angular = project(wa_sin, wa_cos);
      } else {
        angular = angular.cwiseMax(project(wa_sin, wa_cos));
      }
    }
    if (k > 0) accum += angular;
    std::copy(accum.data(), accum.data() + accum.size(), out.at(i, 0));
  }
  return out;
}

}  // namespace georeg
