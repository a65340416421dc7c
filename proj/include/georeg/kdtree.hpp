#pragma once

#include "georeg/core.hpp"

#include <algorithm>
#include <numeric>
#include <span>
#include <vector>

namespace georeg {

inline double squared_distance(const Point3& a, const Point3& b) {
  const double dx = a.x() - b.x();
  const double dy = a.y() - b.y();
  const double dz = a.z() - b.z();
  return dx * dx + dy * dy + dz * dz;
}

struct Neighbor {
  std::size_t index;
  double squared_distance;
};

/// Distance-then-index order. Every query result honours it, so ties always
/// resolve to the lowest point index.
inline bool neighbor_less(const Neighbor& a, const Neighbor& b) {
  if (a.squared_distance != b.squared_distance) return a.squared_distance < b.squared_distance;
  return a.index < b.index;
}

/// Static 3-d tree over a borrowed point array. The points must outlive the tree.
class KdTree {
 public:
  KdTree() = default;

  explicit KdTree(std::span<const Point3> points) : points_(points) {
    order_.resize(points.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    if (!points.empty()) {
      nodes_.reserve(2 * points.size() / kLeafSize + 2);
      build(0, points.size());
    }
  }

  std::size_t size() const noexcept { return points_.size(); }

  /// Nearest point to `query`. The tree must be nonempty.
  Neighbor nearest(const Point3& query) const {
    Neighbor best{std::numeric_limits<std::size_t>::max(), std::numeric_limits<double>::infinity()};
    if (!nodes_.empty()) nearest_impl(0, query, best);
    return best;
  }

  /// The k nearest points sorted by (distance, index), skipping `exclude`.
  std::vector<Neighbor> knn(const Point3& query, std::size_t k,
                            std::size_t exclude = std::numeric_limits<std::size_t>::max()) const {
    std::vector<Neighbor> heap;
    if (k == 0 || nodes_.empty()) return heap;
    heap.reserve(k + 1);
    knn_impl(0, query, k, exclude, heap);
    std::sort_heap(heap.begin(), heap.end(), neighbor_less);
    return heap;
  }

  /// Indices with squared distance strictly below radius², ascending by index.
  std::vector<std::size_t> radius(const Point3& query, double radius) const {
    std::vector<std::size_t> out = radius_unordered(query, radius);
    std::sort(out.begin(), out.end());
    return out;
  }

  /// Same set as radius() in tree order; deterministic for a given tree.
  std::vector<std::size_t> radius_unordered(const Point3& query, double radius) const {
    std::vector<std::size_t> out;
    if (!nodes_.empty()) radius_impl(0, query, radius * radius, out);
    return out;
  }

 private:
  static constexpr std::size_t kLeafSize = 8;

  struct Node {
    std::size_t begin, end;
    int axis = -1;  // -1 for leaves
    double split = 0.0;
    std::size_t left = 0, right = 0;
    Eigen::Vector3d lo, hi;
  };

  std::size_t build(std::size_t begin, std::size_t end) {
    const std::size_t id = nodes_.size();
    nodes_.push_back({});
    Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
    Eigen::Vector3d hi = -lo;
    for (std::size_t i = begin; i < end; ++i) {
      lo = lo.cwiseMin(points_[order_[i]]);
      hi = hi.cwiseMax(points_[order_[i]]);
    }
    Node node;
    node.begin = begin;
    node.end = end;
    node.lo = lo;
    node.hi = hi;
    if (end - begin > kLeafSize) {
      int axis = 0;
      (hi - lo).maxCoeff(&axis);
      const std::size_t mid = begin + (end - begin) / 2;
      std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                       [&](std::size_t a, std::size_t b) { return points_[a][axis] < points_[b][axis]; });
      node.axis = axis;
      node.split = points_[order_[mid]][axis];
      node.left = build(begin, mid);
      node.right = build(mid, end);
    }
    nodes_[id] = node;
    return id;
  }

  static double box_distance(const Node& node, const Point3& q) {
    // Same summation order as squared_distance so the bound never exceeds a true distance.
    double d[3];
    for (int a = 0; a < 3; ++a) {
      d[a] = q[a] < node.lo[a] ? node.lo[a] - q[a] : (q[a] > node.hi[a] ? q[a] - node.hi[a] : 0.0);
    }
    return d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
  }

  /// Squared distance to the farthest box corner, padded so a box reported
  /// inside never holds a point at distance >= r.
  static double box_far_distance(const Node& node, const Point3& q) {
    double d[3];
    for (int a = 0; a < 3; ++a) d[a] = std::max(std::abs(q[a] - node.lo[a]), std::abs(q[a] - node.hi[a]));
    return (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) * (1.0 + 1e-12);
  }

  void nearest_impl(std::size_t id, const Point3& q, Neighbor& best) const {
    const Node& node = nodes_[id];
    if (box_distance(node, q) > best.squared_distance) return;
    if (node.axis < 0) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        const Neighbor cand{order_[i], squared_distance(points_[order_[i]], q)};
        if (neighbor_less(cand, best)) best = cand;
      }
      return;
    }
    const bool go_left = q[node.axis] < node.split;
    nearest_impl(go_left ? node.left : node.right, q, best);
    nearest_impl(go_left ? node.right : node.left, q, best);
  }

  void knn_impl(std::size_t id, const Point3& q, std::size_t k, std::size_t exclude,
                std::vector<Neighbor>& heap) const {
    const Node& node = nodes_[id];
    if (heap.size() == k && box_distance(node, q) > heap.front().squared_distance) return;
    if (node.axis < 0) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        const std::size_t idx = order_[i];
        if (idx == exclude) continue;
        const Neighbor cand{idx, squared_distance(points_[idx], q)};
        if (heap.size() < k) {
          heap.push_back(cand);
          std::push_heap(heap.begin(), heap.end(), neighbor_less);
        } else if (neighbor_less(cand, heap.front())) {
          std::pop_heap(heap.begin(), heap.end(), neighbor_less);
          heap.back() = cand;
          std::push_heap(heap.begin(), heap.end(), neighbor_less);
        }
      }
      return;
    }
    const bool go_left = q[node.axis] < node.split;
    knn_impl(go_left ? node.left : node.right, q, k, exclude, heap);
    knn_impl(go_left ? node.right : node.left, q, k, exclude, heap);
  }

  void radius_impl(std::size_t id, const Point3& q, double r2, std::vector<std::size_t>& out) const {
    const Node& node = nodes_[id];
    if (box_distance(node, q) >= r2) return;
    if (box_far_distance(node, q) < r2) {
      for (std::size_t i = node.begin; i < node.end; ++i) out.push_back(order_[i]);
      return;
    }
    if (node.axis < 0) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        if (squared_distance(points_[order_[i]], q) < r2) out.push_back(order_[i]);
      }
      return;
    }
    radius_impl(node.left, q, r2, out);
    radius_impl(node.right, q, r2, out);
  }

  std::span<const Point3> points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

}  // namespace georeg
