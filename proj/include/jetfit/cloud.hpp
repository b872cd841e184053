#ifndef JETFIT_CLOUD_HPP
#define JETFIT_CLOUD_HPP

#include <Eigen/Core>
#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "jetfit/error.hpp"

namespace jetfit {

template <typename Scalar>
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Mat3 = Eigen::Matrix<Scalar, 3, 3>;
template <typename Scalar>
using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Mat3X = Eigen::Matrix<Scalar, 3, Eigen::Dynamic>;
template <typename Scalar>
using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// World-space points, optionally carrying one unit ground-truth normal per
/// point. Points are columns.
template <typename Scalar>
struct PointCloudT {
  Mat3X<Scalar> points;
  Mat3X<Scalar> gt_normals;  // 0 columns when absent

  Eigen::Index size() const { return points.cols(); }
  bool has_normals() const { return gt_normals.cols() == points.cols(); }

  /// Checks the type invariants: finite coordinates, unit normals (1e-6).
  void validate() const {
    if (!points.allFinite()) throw std::invalid_argument("PointCloud: non-finite coordinate");
    if (gt_normals.cols() != 0) {
      if (gt_normals.cols() != points.cols())
        throw std::invalid_argument("PointCloud: normal count != point count");
      if (!gt_normals.allFinite()) throw std::invalid_argument("PointCloud: non-finite normal");
      for (Eigen::Index i = 0; i < gt_normals.cols(); ++i) {
        if (std::abs(gt_normals.col(i).norm() - Scalar(1)) > Scalar(1e-6))
          throw std::invalid_argument("PointCloud: normal " + std::to_string(i) + " is not unit length");
      }
    }
  }
};

using PointCloud = PointCloudT<double>;

/// Indices of the k nearest points to a query point, sorted by ascending
/// distance. The query point itself is the first entry; remaining distance
/// ties are broken by ascending point index.
struct Neighborhood {
  int query_index = -1;
  std::vector<int> indices;

  int size() const { return static_cast<int>(indices.size()); }
};

/// Descending neighborhood sizes s_0 > s_1 > ... > s_K.
struct ScaleChain {
  std::vector<int> scales;

  ScaleChain() = default;
  explicit ScaleChain(std::vector<int> s) : scales(std::move(s)) {
    if (scales.empty()) throw std::invalid_argument("ScaleChain: empty");
    for (std::size_t i = 0; i < scales.size(); ++i) {
      if (scales[i] < 1) throw std::invalid_argument("ScaleChain: scale < 1");
      if (i > 0 && scales[i] >= scales[i - 1])
        throw std::invalid_argument("ScaleChain: scales must be strictly decreasing");
    }
  }

  int largest() const { return scales.front(); }
  int smallest() const { return scales.back(); }

  /// Chain with every scale clamped to n and duplicates removed; never empty
  /// for n >= 1. Small clouds collapse the chain rather than failing.
  ScaleChain clamped(int n) const {
    ScaleChain out;
    for (int s : scales) {
      int c = std::min(s, n);
      if (out.scales.empty() || c < out.scales.back()) out.scales.push_back(c);
    }
    return out;
  }
};

namespace detail {

/// Sort key for k-NN results: ascending squared distance, the query point
/// first among zero-distance ties, then ascending index.
struct KnnKey {
  double dist2;
  bool not_query;
  int index;

  bool operator<(const KnnKey& o) const {
    if (dist2 != o.dist2) return dist2 < o.dist2;
    if (not_query != o.not_query) return !not_query;
    return index < o.index;
  }
};

}  // namespace detail

/// Exact k-nearest-neighbor index over an immutable cloud. Median-split
/// kd-tree; queries are const and safe to run concurrently.
template <typename Scalar>
class KdTreeT {
 public:
  explicit KdTreeT(const PointCloudT<Scalar>& cloud) : points_(cloud.points) {
    if (points_.cols() == 0) throw std::invalid_argument("KdTree: empty cloud");
    order_.resize(points_.cols());
    std::iota(order_.begin(), order_.end(), 0);
    nodes_.reserve(2 * order_.size());
    root_ = build(0, static_cast<int>(order_.size()));
  }

  Eigen::Index size() const { return points_.cols(); }

  /// k nearest points to cloud point `query`, including the query itself.
  Neighborhood nearest(int query, int k) const {
    if (query < 0 || query >= points_.cols())
      throw std::invalid_argument("KdTree: query index out of range");
    if (k < 1 || k > points_.cols())
      throw std::invalid_argument("KdTree: k out of range (k=" + std::to_string(k) +
                                  ", cloud size=" + std::to_string(points_.cols()) + ")");
    const Vec3<Scalar> q = points_.col(query);

    std::vector<detail::KnnKey> heap;  // max-heap on KnnKey, worst on top
    heap.reserve(static_cast<std::size_t>(k) + 1);
    search(root_, q, query, k, heap);

    std::sort_heap(heap.begin(), heap.end());
    Neighborhood out;
    out.query_index = query;
    out.indices.reserve(heap.size());
    for (const auto& e : heap) out.indices.push_back(e.index);
    return out;
  }

 private:
  struct Node {
    int axis = -1;        // -1 for leaves
    Scalar split = 0;
    int left = -1, right = -1;
    int begin = 0, end = 0;  // leaf range into order_
  };

  static constexpr int kLeafSize = 16;

  int build(int begin, int end) {
    Node node;
    if (end - begin <= kLeafSize) {
      node.begin = begin;
      node.end = end;
      nodes_.push_back(node);
      return static_cast<int>(nodes_.size()) - 1;
    }
    // Split along the widest axis at the median.
    Vec3<Scalar> lo = Vec3<Scalar>::Constant(std::numeric_limits<Scalar>::max());
    Vec3<Scalar> hi = Vec3<Scalar>::Constant(std::numeric_limits<Scalar>::lowest());
    for (int i = begin; i < end; ++i) {
      lo = lo.cwiseMin(points_.col(order_[i]));
      hi = hi.cwiseMax(points_.col(order_[i]));
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    const int mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](int a, int b) {
                       const Scalar pa = points_(axis, a), pb = points_(axis, b);
                       return pa != pb ? pa < pb : a < b;
                     });
    node.axis = axis;
    node.split = points_(axis, order_[mid]);
    const int self = static_cast<int>(nodes_.size());
    nodes_.push_back(node);
    const int left = build(begin, mid);
    const int right = build(mid, end);
    nodes_[self].left = left;
    nodes_[self].right = right;
    return self;
  }

  void consider(int idx, const Vec3<Scalar>& q, int query, int k,
                std::vector<detail::KnnKey>& heap) const {
    const double d2 = static_cast<double>((points_.col(idx) - q).squaredNorm());
    detail::KnnKey key{d2, idx != query, idx};
    if (static_cast<int>(heap.size()) < k) {
      heap.push_back(key);
      std::push_heap(heap.begin(), heap.end());
    } else if (key < heap.front()) {
      std::pop_heap(heap.begin(), heap.end());
      heap.back() = key;
      std::push_heap(heap.begin(), heap.end());
    }
  }

  void search(int node_id, const Vec3<Scalar>& q, int query, int k,
              std::vector<detail::KnnKey>& heap) const {
    const Node& node = nodes_[node_id];
    if (node.axis < 0) {
      for (int i = node.begin; i < node.end; ++i) consider(order_[i], q, query, k, heap);
      return;
    }
    const double delta = static_cast<double>(q[node.axis]) - static_cast<double>(node.split);
    const int near = delta < 0 ? node.left : node.right;
    const int far = delta < 0 ? node.right : node.left;
    search(near, q, query, k, heap);
    // Descend on ties as well: an equal-distance point with a lower index
    // may still displace the current worst.
    if (static_cast<int>(heap.size()) < k || delta * delta <= heap.front().dist2)
      search(far, q, query, k, heap);
  }

  Mat3X<Scalar> points_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

using KdTree = KdTreeT<double>;

/// Builds the spatial index; errors on an empty cloud.
template <typename Scalar>
KdTreeT<Scalar> build_index(const PointCloudT<Scalar>& cloud) {
  return KdTreeT<Scalar>(cloud);
}

/// k-nearest neighborhood of cloud point `query` through the index.
template <typename Scalar>
Neighborhood neighborhood(const KdTreeT<Scalar>& index, int query, int k) {
  return index.nearest(query, k);
}

/// First s entries of a distance-sorted neighborhood; N_s' subset of N_s.
inline Neighborhood scale_subset(const Neighborhood& nbhd, int s) {
  if (s < 1 || s > nbhd.size())
    throw std::invalid_argument("scale_subset: s out of range (s=" + std::to_string(s) +
                                ", neighborhood size=" + std::to_string(nbhd.size()) + ")");
  Neighborhood out;
  out.query_index = nbhd.query_index;
  out.indices.assign(nbhd.indices.begin(), nbhd.indices.begin() + s);
  return out;
}

}  // namespace jetfit

#endif  // JETFIT_CLOUD_HPP
