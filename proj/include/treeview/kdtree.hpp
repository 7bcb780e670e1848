#ifndef TREEVIEW_KDTREE_HPP
#define TREEVIEW_KDTREE_HPP

#include <Eigen/Core>

#include <algorithm>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

namespace treeview {

/// Exact k-nearest-neighbour search over a fixed point set.
///
/// Neighbours are ordered by (squared distance, index), so equal distances
/// resolve to the lower index and results are fully deterministic. The tree
/// keeps a copy of the points; queries are const and thread-safe.
template <int Dim>
class KdTree {
public:
  using Point = Eigen::Matrix<double, Dim, 1>;
  using Neighbor = std::pair<double, std::size_t>;  // (squared distance, index)

  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

  KdTree() = default;

  explicit KdTree(std::span<const Point> points, std::size_t leaf_size = 12)
      : points_(points.begin(), points.end()), leaf_size_(std::max<std::size_t>(leaf_size, 1)) {
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    if (!points_.empty()) {
      nodes_.reserve(2 * points_.size() / leaf_size_ + 2);
      build(0, points_.size());
    }
  }

  std::size_t size() const noexcept { return points_.size(); }
  const Point& point(std::size_t i) const { return points_[i]; }

  /// The k nearest points to `query`, nearest first. `exclude` is skipped
  /// (pass the query's own index to search "other" points).
  std::vector<Neighbor> knn(const Point& query, std::size_t k,
                            std::size_t exclude = kNone) const {
    std::vector<Neighbor> heap;
    if (k == 0 || nodes_.empty()) return heap;
    heap.reserve(k + 1);
    search(0, query, k, exclude, heap);
    std::sort_heap(heap.begin(), heap.end());
    return heap;
  }

  /// Nearest point index, or kNone for an empty tree.
  std::size_t nearest(const Point& query, std::size_t exclude = kNone) const {
    auto nn = knn(query, 1, exclude);
    return nn.empty() ? kNone : nn.front().second;
  }

private:
  struct Node {
    std::size_t begin = 0, end = 0;  // range into order_ (leaves)
    int axis = -1;                   // -1 for leaves
    double split = 0.0;
    std::size_t left = 0, right = 0;
  };

  std::size_t build(std::size_t begin, std::size_t end) {
    const std::size_t id = nodes_.size();
    nodes_.push_back(Node{begin, end});
    if (end - begin <= leaf_size_) return id;

    Point lo = points_[order_[begin]], hi = lo;
    for (std::size_t i = begin; i < end; ++i) {
      lo = lo.cwiseMin(points_[order_[i]]);
      hi = hi.cwiseMax(points_[order_[i]]);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    if (hi[axis] <= lo[axis]) return id;  // all coincident: keep as leaf

    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::size_t a, std::size_t b) {
                       return points_[a][axis] < points_[b][axis];
                     });
    const double split = points_[order_[mid]][axis];
    const std::size_t left = build(begin, mid);
    const std::size_t right = build(mid, end);
    Node& node = nodes_[id];
    node.axis = axis;
    node.split = split;
    node.left = left;
    node.right = right;
    return id;
  }

  static void offer(std::vector<Neighbor>& heap, std::size_t k, Neighbor cand) {
    if (heap.size() < k) {
      heap.push_back(cand);
      std::push_heap(heap.begin(), heap.end());
    } else if (cand < heap.front()) {
      std::pop_heap(heap.begin(), heap.end());
      heap.back() = cand;
      std::push_heap(heap.begin(), heap.end());
    }
  }

  void search(std::size_t id, const Point& q, std::size_t k, std::size_t exclude,
              std::vector<Neighbor>& heap) const {
    const Node& node = nodes_[id];
    if (node.axis < 0) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        const std::size_t idx = order_[i];
        if (idx == exclude) continue;
        offer(heap, k, {(points_[idx] - q).squaredNorm(), idx});
      }
      return;
    }
    const double diff = q[node.axis] - node.split;
    const std::size_t near = diff < 0 ? node.left : node.right;
    const std::size_t far = diff < 0 ? node.right : node.left;
    search(near, q, k, exclude, heap);
    // <= keeps equal-distance candidates with lower indices reachable
    if (heap.size() < k || diff * diff <= heap.front().first)
      search(far, q, k, exclude, heap);
  }

  std::vector<Point> points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
  std::size_t leaf_size_ = 12;
};

using KdTree3 = KdTree<3>;
using KdTree2 = KdTree<2>;

}  // namespace treeview

#endif  // TREEVIEW_KDTREE_HPP
