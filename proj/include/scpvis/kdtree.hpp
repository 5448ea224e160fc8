#pragma once

#include "scpvis/geometry.hpp"

#include <cstdint>
#include <numeric>
#include <utility>

namespace scpvis {

/**
 * Static 3D k-d tree over a borrowed point array.
 *
 * Nodes keep tight bounding boxes so radius and segment-proximity queries can
 * prune whole subtrees. The indexed points must outlive the tree and must not
 * be modified after construction.
 */
class KdTree {
 public:
  KdTree() = default;

  explicit KdTree(const Points* points, int leaf_size = 12)
      : points_(points), leaf_size_(leaf_size) {
    index_.resize(points_->size());
    std::iota(index_.begin(), index_.end(), 0u);
    if (!index_.empty()) {
      nodes_.reserve(2 * index_.size() / static_cast<std::size_t>(leaf_size_) + 2);
      build(0, static_cast<std::uint32_t>(index_.size()));
    }
  }

  std::size_t size() const { return index_.size(); }

  /// Indices of all points with |p - center| <= radius.
  template <typename Fn>
  void for_each_in_radius(const Vec3& center, double radius, Fn&& fn) const {
    if (nodes_.empty()) return;
    const double r2 = radius * radius;
    std::uint32_t stack[64];
    int top = 0;
    stack[top++] = 0;
    while (top > 0) {
      const Node& n = nodes_[stack[--top]];
      if (box_dist_sq(n, center) > r2) continue;
      if (n.left == kLeaf) {
        for (std::uint32_t i = n.begin; i < n.end; ++i) {
          const std::uint32_t idx = index_[i];
          if (((*points_)[idx] - center).squaredNorm() <= r2) fn(idx);
        }
      } else {
        stack[top++] = n.left;
        stack[top++] = n.right;
      }
    }
  }

  std::vector<std::uint32_t> radius_search(const Vec3& center,
                                           double radius) const {
    std::vector<std::uint32_t> out;
    for_each_in_radius(center, radius, [&](std::uint32_t i) { out.push_back(i); });
    return out;
  }

  /// True if some point lies strictly closer than `clearance` to segment [a,b].
  bool any_near_segment(const Vec3& a, const Vec3& b, double clearance) const {
    if (nodes_.empty()) return false;
    const double c2 = clearance * clearance;
    std::uint32_t stack[64];
    int top = 0;
    stack[top++] = 0;
    while (top > 0) {
      const Node& n = nodes_[stack[--top]];
      if (!segment_hits_box(a, b, n.lo, n.hi, clearance)) continue;
      if (n.left == kLeaf) {
        for (std::uint32_t i = n.begin; i < n.end; ++i) {
          if (point_segment_distance_sq((*points_)[index_[i]], a, b) < c2)
            return true;
        }
      } else {
        stack[top++] = n.left;
        stack[top++] = n.right;
      }
    }
    return false;
  }

  /// Nearest point index and its distance; {-1, inf} for an empty tree.
  std::pair<long, double> nearest(const Vec3& q) const {
    long best = -1;
    double best_d2 = std::numeric_limits<double>::infinity();
    if (nodes_.empty()) return {best, best_d2};
    std::uint32_t stack[64];
    int top = 0;
    stack[top++] = 0;
    while (top > 0) {
      const Node& n = nodes_[stack[--top]];
      if (box_dist_sq(n, q) >= best_d2) continue;
      if (n.left == kLeaf) {
        for (std::uint32_t i = n.begin; i < n.end; ++i) {
          const double d2 = ((*points_)[index_[i]] - q).squaredNorm();
          if (d2 < best_d2) {
            best_d2 = d2;
            best = index_[i];
          }
        }
      } else {
        // visit the closer child first
        const double dl = box_dist_sq(nodes_[n.left], q);
        const double dr = box_dist_sq(nodes_[n.right], q);
        if (dl < dr) {
          stack[top++] = n.right;
          stack[top++] = n.left;
        } else {
          stack[top++] = n.left;
          stack[top++] = n.right;
        }
      }
    }
    return {best, std::sqrt(best_d2)};
  }

 private:
  static constexpr std::uint32_t kLeaf = 0xffffffffu;

  struct Node {
    Vec3 lo;
    Vec3 hi;
    std::uint32_t begin;
    std::uint32_t end;
    std::uint32_t left;
    std::uint32_t right;
  };

  static double box_dist_sq(const Node& n, const Vec3& p) {
    const Vec3 d = (n.lo - p).cwiseMax(p - n.hi).cwiseMax(Vec3::Zero());
    return d.squaredNorm();
  }

  std::uint32_t build(std::uint32_t begin, std::uint32_t end) {
    const std::uint32_t id = static_cast<std::uint32_t>(nodes_.size());
    nodes_.push_back(Node{});
    Aabb box;
    for (std::uint32_t i = begin; i < end; ++i) box.extend((*points_)[index_[i]]);
    Node node{box.min, box.max, begin, end, kLeaf, kLeaf};
    if (end - begin > static_cast<std::uint32_t>(leaf_size_)) {
      int axis = 0;
      box.extent().maxCoeff(&axis);
      const std::uint32_t mid = begin + (end - begin) / 2;
      std::nth_element(index_.begin() + begin, index_.begin() + mid,
                       index_.begin() + end,
                       [&](std::uint32_t x, std::uint32_t y) {
                         return (*points_)[x][axis] < (*points_)[y][axis];
                       });
      node.left = build(begin, mid);
      node.right = build(mid, end);
    }
    nodes_[id] = node;
    return id;
  }

  const Points* points_ = nullptr;
  int leaf_size_ = 12;
  std::vector<std::uint32_t> index_;
  std::vector<Node> nodes_;
};

}  // namespace scpvis
