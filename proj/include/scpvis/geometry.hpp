#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace scpvis {

using Vec3 = Eigen::Vector3d;
using Points = std::vector<Vec3, Eigen::aligned_allocator<Vec3>>;

struct Aabb {
  Vec3 min = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 max = Vec3::Constant(-std::numeric_limits<double>::infinity());

  bool empty() const { return (min.array() > max.array()).any(); }

  void extend(const Vec3& p) {
    min = min.cwiseMin(p);
    max = max.cwiseMax(p);
  }

  bool contains(const Vec3& p, double tol = 0.0) const {
    return (p.array() >= min.array() - tol).all() &&
           (p.array() <= max.array() + tol).all();
  }

  Vec3 extent() const { return max - min; }
};

inline Aabb bounding_box(const Points& pts) {
  Aabb box;
  for (const auto& p : pts) box.extend(p);
  return box;
}

inline double point_segment_distance_sq(const Vec3& p, const Vec3& a,
                                        const Vec3& b) {
  const Vec3 ab = b - a;
  const double len2 = ab.squaredNorm();
  double t = len2 > 0.0 ? (p - a).dot(ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return (a + t * ab - p).squaredNorm();
}

/// Slab test: does segment [a,b] touch the box grown by `pad`?
inline bool segment_hits_box(const Vec3& a, const Vec3& b, const Vec3& lo,
                             const Vec3& hi, double pad) {
  double t0 = 0.0;
  double t1 = 1.0;
  const Vec3 d = b - a;
  for (int k = 0; k < 3; ++k) {
    const double l = lo[k] - pad;
    const double h = hi[k] + pad;
    if (std::abs(d[k]) < 1e-300) {
      if (a[k] < l || a[k] > h) return false;
      continue;
    }
    double ta = (l - a[k]) / d[k];
    double tb = (h - a[k]) / d[k];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return false;
  }
  return true;
}

/// Evenly spread unit directions (golden-angle spiral).
inline Points fibonacci_sphere(int count) {
  Points dirs;
  dirs.reserve(static_cast<std::size_t>(count));
  const double golden = M_PI * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < count; ++i) {
    const double z = 1.0 - (2.0 * i + 1.0) / count;
    const double rad = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden * i;
    dirs.emplace_back(rad * std::cos(phi), rad * std::sin(phi), z);
  }
  return dirs;
}

}  // namespace scpvis
