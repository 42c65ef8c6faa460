#include <algorithm>
#include <numeric>
#include <queue>

#include "ndesc/errors.hpp"
#include "ndesc/geomcore.hpp"

namespace ndesc {

namespace {

constexpr int kLeafSize = 12;

struct Candidate {
  double dist2;
  int index;
  // Max-heap on (dist2, index): the top is the worst kept candidate.
  bool operator<(const Candidate& o) const {
    return dist2 < o.dist2 || (dist2 == o.dist2 && index < o.index);
  }
};

}  // namespace

KdTree::KdTree(const Points& points) : points_(&points) {
  order_.resize(static_cast<std::size_t>(points.rows()));
  std::iota(order_.begin(), order_.end(), 0);
  if (!order_.empty()) {
    nodes_.reserve(2 * order_.size() / kLeafSize + 2);
    build(0, static_cast<int>(order_.size()));
  }
}

int KdTree::build(int begin, int end) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({begin, end});
  if (end - begin <= kLeafSize) return id;

  Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector3d hi = -lo;
  for (int i = begin; i < end; ++i) {
    const Eigen::Vector3d p = points_->row(order_[i]).transpose();
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  if (hi[axis] - lo[axis] <= 0.0) return id;  // all coincident: keep as leaf

  const int mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](int a, int b) { return (*points_)(a, axis) < (*points_)(b, axis); });
  const double split = (*points_)(order_[mid], axis);
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

std::vector<int> KdTree::knn(const Eigen::Vector3d& query, std::size_t k,
                             std::optional<std::size_t> exclude) const {
  const std::size_t available = size() - (exclude ? 1 : 0);
  if (k > available)
    throw ConfigError("knn: k=" + std::to_string(k) + " exceeds available points (" +
                      std::to_string(available) + ")");
  std::priority_queue<Candidate> heap;
  if (k == 0) return {};

  const int excluded = exclude ? static_cast<int>(*exclude) : -1;
  // Explicit stack of (node, lower bound on squared distance).
  std::vector<std::pair<int, double>> stack{{0, 0.0}};
  while (!stack.empty()) {
    const auto [id, bound] = stack.back();
    stack.pop_back();
    if (heap.size() == k && bound > heap.top().dist2) continue;
    const Node& node = nodes_[static_cast<std::size_t>(id)];
    if (node.axis < 0) {
      for (int i = node.begin; i < node.end; ++i) {
        const int idx = order_[static_cast<std::size_t>(i)];
        if (idx == excluded) continue;
        const double d2 = (points_->row(idx).transpose() - query).squaredNorm();
        const Candidate c{d2, idx};
        if (heap.size() < k) {
          heap.push(c);
        } else if (c < heap.top()) {
          heap.pop();
          heap.push(c);
        }
      }
      continue;
    }
    const double diff = query[node.axis] - node.split;
    const int near = diff < 0.0 ? node.left : node.right;
    const int far = diff < 0.0 ? node.right : node.left;
    // Points equal to the split value can sit on either side, so the far
    // bound is the squared gap, and pruning only drops strictly worse nodes.
    stack.push_back({far, std::max(bound, diff * diff)});
    stack.push_back({near, bound});
  }

  std::vector<int> result(heap.size());
  for (std::size_t i = result.size(); i-- > 0;) {
    result[i] = heap.top().index;
    heap.pop();
  }
  return result;
}

std::vector<int> knn(const Points& points, std::size_t query_index, std::size_t k) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (query_index >= n) throw ConfigError("knn: query index out of range");
  if (k >= n)
    throw ConfigError("knn: k=" + std::to_string(k) + " must be below point count " +
                      std::to_string(n));
  const KdTree tree(points);
  return tree.knn(points.row(static_cast<Eigen::Index>(query_index)).transpose(), k, query_index);
}

Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> knn_table(const Points& points,
                                                                             std::size_t k) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (k >= n)
    throw ConfigError("knn: k=" + std::to_string(k) + " must be below point count " +
                      std::to_string(n));
  const KdTree tree(points);
  Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> table(
      static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < n; ++i) {
    const auto nb = tree.knn(points.row(static_cast<Eigen::Index>(i)).transpose(), k, i);
    for (std::size_t j = 0; j < k; ++j)
      table(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = nb[j];
  }
  return table;
}

PatchCloud extract_vertex_patch(const KdTree& tree, const Points& points, std::size_t vertex_index,
                                std::size_t k) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (n <= k)
    throw ConfigError("vertex patch needs more than K=" + std::to_string(k) + " points, got " +
                      std::to_string(n));
  if (vertex_index >= n) throw ConfigError("vertex index out of range");
  const Eigen::RowVector3d center = points.row(static_cast<Eigen::Index>(vertex_index));
  const auto nb = tree.knn(center.transpose(), k, vertex_index);
  PatchCloud patch;
  patch.points.resize(static_cast<Eigen::Index>(k + 1), 3);
  patch.points.row(0).setZero();
  for (std::size_t j = 0; j < k; ++j)
    patch.points.row(static_cast<Eigen::Index>(j + 1)) = points.row(nb[j]) - center;
  patch.origin_index = 0;
  double radius = 0.0;
  for (Eigen::Index i = 0; i < patch.points.rows(); ++i)
    radius = std::max(radius, patch.points.row(i).norm());
  patch.domain_radius = radius > 0.0 ? radius : 1.0;
  return patch;
}

PatchCloud extract_vertex_patch(const Points& points, std::size_t vertex_index, std::size_t k) {
  if (static_cast<std::size_t>(points.rows()) <= k)
    throw ConfigError("vertex patch needs more than K=" + std::to_string(k) + " points, got " +
                      std::to_string(points.rows()));
  const KdTree tree(points);
  return extract_vertex_patch(tree, points, vertex_index, k);
}

}  // namespace ndesc
