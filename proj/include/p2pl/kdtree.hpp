#ifndef P2PL_KDTREE_HPP
#define P2PL_KDTREE_HPP

#include <p2pl/geom.hpp>

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <queue>
#include <span>
#include <utility>
#include <vector>

namespace p2pl {

/// Result of a nearest-neighbor query.
struct Neighbor {
  std::size_t index = 0;
  double sq_dist = std::numeric_limits<double>::infinity();

  /// Distance first, then lowest index.
  friend bool operator<(const Neighbor& a, const Neighbor& b) {
    return a.sq_dist < b.sq_dist || (a.sq_dist == b.sq_dist && a.index < b.index);
  }
};

/// Static 3-d tree over a borrowed point array. Queries are exact and break
/// distance ties toward the lowest point index, so results equal a brute-force
/// scan bit for bit.
class KdTree {
 public:
  explicit KdTree(std::span<const Vec3> points, std::size_t leaf_size = 8)
      : points_(points), leaf_size_(std::max<std::size_t>(leaf_size, 1)) {
    order_.resize(points.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    if (!order_.empty()) build(0, order_.size());
  }

  std::size_t size() const { return points_.size(); }

  Neighbor nearest(const Vec3& q) const {
    Neighbor best;
    if (!nodes_.empty()) search_nearest(0, q, best);
    return best;
  }

  /// k nearest points sorted by (distance, index).
  std::vector<Neighbor> knn(const Vec3& q, std::size_t k) const {
    k = std::min(k, points_.size());
    std::priority_queue<Neighbor> heap;  // worst on top
    if (k > 0 && !nodes_.empty()) search_knn(0, q, k, heap);
    std::vector<Neighbor> out(heap.size());
    for (std::size_t i = out.size(); i-- > 0;) {
      out[i] = heap.top();
      heap.pop();
    }
    return out;
  }

 private:
  struct Node {
    std::uint32_t begin = 0, end = 0;  // range in order_ (leaves only)
    std::int32_t left = -1, right = -1;
    int axis = 0;
    double split = 0.0;
    bool leaf() const { return left < 0; }
  };

  std::int32_t build(std::size_t begin, std::size_t end) {
    const auto id = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back({});
    if (end - begin <= leaf_size_) {
      nodes_[id].begin = static_cast<std::uint32_t>(begin);
      nodes_[id].end = static_cast<std::uint32_t>(end);
      return id;
    }
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = -lo;
    for (std::size_t i = begin; i < end; ++i) {
      lo = lo.cwiseMin(points_[order_[i]]);
      hi = hi.cwiseMax(points_[order_[i]]);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                     order_.begin() + static_cast<std::ptrdiff_t>(mid),
                     order_.begin() + static_cast<std::ptrdiff_t>(end),
                     [&](std::size_t a, std::size_t b) { return points_[a][axis] < points_[b][axis]; });
    const double split = points_[order_[mid]][axis];
    const auto left = build(begin, mid);
    const auto right = build(mid, end);
    nodes_[id].axis = axis;
    nodes_[id].split = split;
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
  }

  // Points left of mid satisfy coord <= split, points right satisfy coord >= split.
  void search_nearest(std::int32_t id, const Vec3& q, Neighbor& best) const {
    const Node& node = nodes_[id];
    if (node.leaf()) {
      for (std::uint32_t i = node.begin; i < node.end; ++i) {
        const Neighbor cand{order_[i], (points_[order_[i]] - q).squaredNorm()};
        if (cand < best) best = cand;
      }
      return;
    }
    const double diff = q[node.axis] - node.split;
    const auto near = diff <= 0.0 ? node.left : node.right;
    const auto far = diff <= 0.0 ? node.right : node.left;
    search_nearest(near, q, best);
    if (diff * diff <= best.sq_dist) search_nearest(far, q, best);
  }

  void search_knn(std::int32_t id, const Vec3& q, std::size_t k, std::priority_queue<Neighbor>& heap) const {
    const Node& node = nodes_[id];
    if (node.leaf()) {
      for (std::uint32_t i = node.begin; i < node.end; ++i) {
        const Neighbor cand{order_[i], (points_[order_[i]] - q).squaredNorm()};
        if (heap.size() < k) {
          heap.push(cand);
        } else if (cand < heap.top()) {
          heap.pop();
          heap.push(cand);
        }
      }
      return;
    }
    const double diff = q[node.axis] - node.split;
    const auto near = diff <= 0.0 ? node.left : node.right;
    const auto far = diff <= 0.0 ? node.right : node.left;
    search_knn(near, q, k, heap);
    if (heap.size() < k || diff * diff <= heap.top().sq_dist) search_knn(far, q, k, heap);
  }

  std::span<const Vec3> points_;
  std::size_t leaf_size_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

}  // namespace p2pl

#endif  // P2PL_KDTREE_HPP
