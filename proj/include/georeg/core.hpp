#pragma once

#include <Eigen/Core>
#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace georeg {

enum class ErrorKind {
  InvalidInput,
  Degenerate,
  Config,
  Numerical,
  NoPatches,
  NoCandidates,
  Io,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "invalid-input";
    case ErrorKind::Degenerate: return "degenerate-input";
    case ErrorKind::Config: return "config";
    case ErrorKind::Numerical: return "numerical";
    case ErrorKind::NoPatches: return "no-patches";
    case ErrorKind::NoCandidates: return "no-candidates";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Error raised by one stage of the registration pipeline; `stage()` names it.
class StageError : public Error {
 public:
  StageError(std::string stage, const Error& inner)
      : Error(inner.kind(), "[" + stage + "] " + inner.what()), stage_(std::move(stage)) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

using Point3 = Eigen::Vector3d;
using Matrix3 = Eigen::Matrix3d;
using MatrixXd = Eigen::MatrixXd;
using VectorXd = Eigen::VectorXd;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using FeatureMatrix = RowMatrix<double>;

struct PointCloud {
  std::vector<Point3> points;
  /// One row per point when present.
  std::optional<FeatureMatrix> features;

  std::size_t size() const noexcept { return points.size(); }
  bool empty() const noexcept { return points.empty(); }

  bool has_features() const noexcept { return features.has_value(); }
  Eigen::Index feature_dim() const noexcept { return features ? features->cols() : 0; }
};

inline bool is_finite(const Point3& p) {
  return std::isfinite(p.x()) && std::isfinite(p.y()) && std::isfinite(p.z());
}

inline void validate(const PointCloud& cloud) {
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    if (!is_finite(cloud.points[i])) {
      throw Error(ErrorKind::InvalidInput, "non-finite point at index " + std::to_string(i));
    }
  }
  if (cloud.features) {
    if (static_cast<std::size_t>(cloud.features->rows()) != cloud.points.size()) {
      throw Error(ErrorKind::InvalidInput, "feature row count does not match point count");
    }
    if (cloud.features->cols() < 1) throw Error(ErrorKind::InvalidInput, "feature width must be >= 1");
  }
}

struct RigidTransform {
  Matrix3 R = Matrix3::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();

  static RigidTransform identity() { return {}; }

  Point3 apply(const Point3& p) const { return R * p + t; }

  RigidTransform inverse() const {
    RigidTransform inv;
    inv.R = R.transpose();
    inv.t = -(inv.R * t);
    return inv;
  }

  /// (*this) after `rhs`: x -> this(rhs(x)).
  RigidTransform compose(const RigidTransform& rhs) const {
    RigidTransform out;
    out.R = R * rhs.R;
    out.t = R * rhs.t + t;
    return out;
  }

  bool is_valid(double tol = 1e-9) const {
    if (!R.allFinite() || !t.allFinite()) return false;
    const double ortho = (R.transpose() * R - Matrix3::Identity()).cwiseAbs().maxCoeff();
    const double det = R.determinant();
    return ortho < tol && std::abs(det - 1.0) <= tol;
  }
};

inline void validate(const RigidTransform& T) {
  if (!T.is_valid()) throw Error(ErrorKind::InvalidInput, "transform is not a proper rotation");
}

/// SplitMix64. Bit-exact across platforms, which std distributions are not.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  /// Independent stream derived from this generator's seed and a salt.
  static Rng derive(std::uint64_t seed, std::uint64_t salt) {
    Rng mixer(seed ^ (salt * 0xD1B54A32D192ED03ULL));
    mixer.next_u64();
    return Rng(mixer.next_u64());
  }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

inline Matrix3 axis_angle(const Eigen::Vector3d& axis, double angle_rad) {
  return Eigen::AngleAxisd(angle_rad, axis.normalized()).toRotationMatrix();
}

/// Rotation about a uniformly random axis by an angle drawn uniformly in [0, max_angle].
inline RigidTransform random_transform(Rng& rng, double max_angle_rad, double max_translation) {
  Eigen::Vector3d axis;
  do {
    axis = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
  } while (axis.norm() < 1e-12);
  RigidTransform T;
  T.R = axis_angle(axis, rng.uniform(0.0, max_angle_rad));
  T.t = Eigen::Vector3d(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)) * max_translation;
  return T;
}

constexpr double kDegToRad = std::numbers::pi / 180.0;
constexpr double kRadToDeg = 180.0 / std::numbers::pi;

}  // namespace georeg
