#pragma once

#include "scpvis/error.hpp"
#include "scpvis/geometry.hpp"
#include "scpvis/path_search.hpp"
#include "scpvis/pointcloud_map.hpp"
#include "scpvis/quickhull.hpp"
#include "scpvis/routing.hpp"
#include "scpvis/star_convex.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace scpvis {

/// {x : A x <= b} with unit-norm rows, plus its vertices.
struct ConvexPolytope {
  Eigen::Matrix<double, Eigen::Dynamic, 3> normals;
  Eigen::VectorXd offsets;
  Points vertices;
  Vec3 seed = Vec3::Zero();

  std::size_t face_count() const { return static_cast<std::size_t>(offsets.size()); }

  /// Largest signed plane distance; <= 0 means inside.
  double max_violation(const Vec3& x) const { return (normals * x - offsets).maxCoeff(); }
  bool contains(const Vec3& x, double tol = 0.0) const { return max_violation(x) <= tol; }
};

namespace detail {

/**
 * Drops redundant halfspaces and enumerates vertices through the polar dual
 * about an interior point: plane (n, b) maps to n / (b - n.s), hull vertices
 * of the dual are the irredundant planes and dual faces are primal vertices.
 */
inline void finalize_polytope(ConvexPolytope& poly,
                              const std::vector<std::pair<Vec3, double>>& planes) {
  const Vec3& s = poly.seed;
  Points dual;
  dual.reserve(planes.size());
  for (const auto& [n, b] : planes) dual.push_back(n / (b - n.dot(s)));
  const ConvexHull hull = quickhull(dual);
  poly.normals.resize(static_cast<Eigen::Index>(hull.vertices.size()), 3);
  poly.offsets.resize(static_cast<Eigen::Index>(hull.vertices.size()));
  for (std::size_t i = 0; i < hull.vertices.size(); ++i) {
    const auto& [n, b] = planes[static_cast<std::size_t>(hull.vertices[i])];
    poly.normals.row(static_cast<Eigen::Index>(i)) = n.transpose();
    poly.offsets[static_cast<Eigen::Index>(i)] = b;
  }
  poly.vertices.clear();
  for (const auto& f : hull.faces) {
    const Vec3 v = s + f.normal / f.offset;
    bool dup = false;
    for (const auto& u : poly.vertices)
      if ((u - v).squaredNorm() < 1e-18 * std::max(1.0, v.squaredNorm())) {
        dup = true;
        break;
      }
    if (!dup) poly.vertices.push_back(v);
  }
}

}  // namespace detail

/**
 * Obstacle-free polytope around `seed`. Starts from the cube of half-width
 * `gen_radius` (cut to `bounds` when given) and, visiting map points by
 * increasing distance, adds for every point that is inside or within `margin`
 * of the current region the plane with normal p - seed placed `margin` short
 * of p.
 */
inline ConvexPolytope generate_polytope(const PointCloudMap& map, const Vec3& seed,
                                        double gen_radius, double margin,
                                        const std::optional<Aabb>& bounds = std::nullopt) {
  if (!(gen_radius > 0.0) || !(margin >= 0.0))
    throw Error(ErrorKind::input, "generate_polytope needs gen_radius > 0 and margin >= 0");
  const double clear = map.empty() ? std::numeric_limits<double>::infinity()
                                   : nearest_distance(map, seed);
  if (!(clear > margin))
    throw Error(ErrorKind::seed_in_collision,
                "polytope seed " + detail::fmt_point(seed) + " is within " +
                    std::to_string(margin) + " m of the map");

  std::vector<std::pair<Vec3, double>> planes;
  for (int k = 0; k < 3; ++k) {
    double hi = seed[k] + gen_radius, lo = seed[k] - gen_radius;
    if (bounds) {
      hi = std::max(std::min(hi, bounds->max[k]), seed[k] + 1e-3);
      lo = std::min(std::max(lo, bounds->min[k]), seed[k] - 1e-3);
    }
    planes.emplace_back(Vec3::Unit(k), hi);
    planes.emplace_back(-Vec3::Unit(k), -lo);
  }

  Points local = range_query(map, seed, gen_radius * std::sqrt(3.0) + margin);
  std::sort(local.begin(), local.end(), [&](const Vec3& a, const Vec3& b) {
    return (a - seed).squaredNorm() < (b - seed).squaredNorm();
  });
  for (const auto& p : local) {
    bool close = true;
    for (const auto& [n, b] : planes)
      if (n.dot(p) >= b + margin) {
        close = false;
        break;
      }
    if (!close) continue;
    const Vec3 n = (p - seed).normalized();
    planes.emplace_back(n, n.dot(p) - margin);
  }

  ConvexPolytope poly;
  poly.seed = seed;
  detail::finalize_polytope(poly, planes);
  return poly;
}

// ---------------------------------------------------------------------------
// Path clipping

struct PathExit {
  Vec3 point = Vec3::Zero();
  int segment = -1;        // path segment (i, i+1) that leaves; -1 if none
  bool reached_end = false;
};

/// Last point of the path, from waypoint `enter_index` on, before it leaves
/// the polytope.
inline PathExit path_polytope_exit(const ConvexPolytope& poly, const Points& path,
                                   int enter_index) {
  PathExit out;
  for (std::size_t i = static_cast<std::size_t>(enter_index); i + 1 < path.size(); ++i) {
    const Vec3& a = path[i];
    const Vec3 d = path[i + 1] - a;
    double t_exit = 1.0;
    for (Eigen::Index k = 0; k < poly.normals.rows(); ++k) {
      const Vec3 n = poly.normals.row(k).transpose();
      const double nd = n.dot(d);
      if (nd <= 0.0) continue;
      t_exit = std::min(t_exit, std::max(0.0, (poly.offsets[k] - n.dot(a)) / nd));
    }
    if (t_exit < 1.0 || !poly.contains(path[i + 1])) {
      out.point = a + t_exit * d;
      out.segment = static_cast<int>(i);
      return out;
    }
  }
  out.point = path.back();
  out.reached_end = true;
  return out;
}

// ---------------------------------------------------------------------------
// Corridor

enum class ElementType { scp, poly };

struct CorridorElement {
  ElementType type = ElementType::poly;
  int route_index = -1;  // SCP elements: position in the tour
  int spot_index = -1;   // SCP elements: index into the task's spot list
  double dwell = 0.0;    // SCP elements: required dwell time
  ConvexPolytope poly;   // poly elements
};

struct Corridor {
  std::vector<CorridorElement> elements;
  Points junctions;  // junctions[j] lies in elements[j] and elements[j + 1]
  Vec3 start = Vec3::Zero();
  Vec3 goal = Vec3::Zero();
};

struct CorridorOptions {
  double d_min = 0.1;
  double alpha = 100.0;
  double gen_radius = 3.0;
  int max_polytopes_per_leg = 64;
  double sample_step = 0.05;
  std::optional<Aabb> bounds;
};

/// SCP membership with the optimisation margin: LSE >= d_min and inside the
/// shrunken bound ball, both up to `tol`.
inline bool scp_contains_with_margin(const StarPolytope& scp, const Vec3& x, double d_min,
                                     double alpha, double tol = 1e-3) {
  const Violation v = visibility_violation(scp, x, d_min, alpha, 0.0);
  return v.lse_hat <= tol && v.ball_excess <= tol;
}

inline bool element_contains(const CorridorElement& e, const std::vector<const StarPolytope*>& scps,
                             const Vec3& x, const CorridorOptions& o) {
  if (e.type == ElementType::poly) return e.poly.contains(x);
  return scp_contains_with_margin(*scps[static_cast<std::size_t>(e.route_index)], x, o.d_min,
                                  o.alpha);
}

namespace detail {

/// Points along a polyline at most `step` apart, including every vertex.
inline Points densify(const Points& path, double step) {
  Points out;
  if (path.empty()) return out;
  out.push_back(path.front());
  for (std::size_t i = 1; i < path.size(); ++i) {
    const Vec3 d = path[i] - path[i - 1];
    const int k = std::max(1, static_cast<int>(std::ceil(d.norm() / step)));
    for (int j = 1; j <= k; ++j) out.push_back(path[i - 1] + d * (static_cast<double>(j) / k));
  }
  return out;
}

}  // namespace detail

/**
 * Chains polytopes along each leg's seed path between consecutive SCPs.
 *
 * Per leg the path is walked in dense samples. The chain ends as soon as the
 * current element holds a sample from which the rest of the leg stays inside
 * the target SCP; otherwise the last sample inside the current element that
 * is clear of the map seeds the next polytope. `spot_index` and `dwell` are
 * per route position.
 */
inline Corridor build_corridor(const PointCloudMap& map,
                               const std::vector<const StarPolytope*>& scps,
                               const std::vector<int>& spot_index,
                               const std::vector<double>& dwell, const WaypointSet& ws,
                               const std::vector<GridPath>& paths, const CorridorOptions& o = {}) {
  const int n = static_cast<int>(scps.size());
  if (static_cast<int>(paths.size()) != n + 1 || static_cast<int>(ws.waypoints.size()) != n)
    throw Error(ErrorKind::input, "build_corridor needs N waypoints and N + 1 leg paths");
  Corridor corr;
  corr.start = ws.start;
  corr.goal = ws.goal;

  auto scp_element = [&](int i) {
    CorridorElement e;
    e.type = ElementType::scp;
    e.route_index = i;
    e.spot_index = spot_index[static_cast<std::size_t>(i)];
    e.dwell = dwell[static_cast<std::size_t>(i)];
    return e;
  };
  auto contains = [&](const CorridorElement& e, const Vec3& x) {
    return element_contains(e, scps, x, o);
  };

  for (int leg = 0; leg <= n; ++leg) {
    const Points samples = detail::densify(paths[static_cast<std::size_t>(leg)].waypoints,
                                           o.sample_step);
    const int m = static_cast<int>(samples.size());
    // tail: first sample from which the rest of the leg lies in the target
    int tail = m - 1;
    std::optional<CorridorElement> target;
    if (leg < n) {
      target = scp_element(leg);
      while (tail > 0 && contains(*target, samples[static_cast<std::size_t>(tail - 1)])) --tail;
      if (!contains(*target, samples.back()))
        throw Error(ErrorKind::corridor_failure,
                    "leg " + std::to_string(leg) + " does not end inside its SCP");
    }
    auto done_at = [&](const CorridorElement& cur, int k) {
      return k >= tail && contains(cur, samples[static_cast<std::size_t>(k)]);
    };

    int pos = 0;  // current sample, inside the current element
    if (leg == 0) {
      bool direct = false;
      if (target) {
        direct = tail == 0;
      }
      if (direct) {
        corr.elements.push_back(*target);
        continue;
      }
      CorridorElement first;
      first.poly = generate_polytope(map, samples.front(), o.gen_radius, o.d_min, o.bounds);
      corr.elements.push_back(std::move(first));
    }

    int added = 0;
    for (;;) {
      const CorridorElement& cur = corr.elements.back();
      // farthest sample reachable without leaving the current element
      int last_in = pos;
      while (last_in + 1 < m && contains(cur, samples[static_cast<std::size_t>(last_in + 1)]))
        ++last_in;
      if (target) {
        int hit = -1;
        for (int k = std::max(pos, tail); k <= last_in; ++k)
          if (done_at(cur, k)) {
            hit = k;
            break;
          }
        if (hit >= 0) {
          corr.junctions.push_back(samples[static_cast<std::size_t>(hit)]);
          corr.elements.push_back(*target);
          break;
        }
      } else if (last_in == m - 1) {
        break;  // final leg: the goal is covered
      }
      if (++added > o.max_polytopes_per_leg)
        throw Error(ErrorKind::corridor_failure,
                    "leg " + std::to_string(leg) + " needs more than " +
                        std::to_string(o.max_polytopes_per_leg) + " polytopes");
      // seed: latest sample inside the current element that is clear of the map
      int seed = -1;
      const int lowest = cur.type == ElementType::scp ? pos : pos + 1;
      for (int k = last_in; k >= lowest; --k) {
        const Vec3& p = samples[static_cast<std::size_t>(k)];
        if (map.empty() || nearest_distance(map, p) > o.d_min + 1e-6) {
          seed = k;
          break;
        }
      }
      if (seed < 0)
        throw Error(ErrorKind::corridor_failure,
                    "leg " + std::to_string(leg) + " makes no progress near " +
                        detail::fmt_point(samples[static_cast<std::size_t>(pos)]));
      CorridorElement next;
      next.poly = generate_polytope(map, samples[static_cast<std::size_t>(seed)], o.gen_radius,
                                    o.d_min, o.bounds);
      corr.junctions.push_back(samples[static_cast<std::size_t>(seed)]);
      corr.elements.push_back(std::move(next));
      pos = seed;
    }
  }
  return corr;
}

// ---------------------------------------------------------------------------
// Export

inline nlohmann::json corridor_to_json(const Corridor& corr) {
  using nlohmann::json;
  auto vec = [](const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); };
  json elems = json::array();
  for (const auto& e : corr.elements) {
    json j;
    if (e.type == ElementType::scp) {
      j["type"] = "scp";
      j["route_index"] = e.route_index;
      j["spot"] = e.spot_index;
      j["dwell"] = e.dwell;
    } else {
      j["type"] = "poly";
      j["seed"] = vec(e.poly.seed);
      json hs = json::array();
      for (Eigen::Index k = 0; k < e.poly.normals.rows(); ++k)
        hs.push_back({{"normal", vec(e.poly.normals.row(k).transpose())},
                      {"offset", e.poly.offsets[k]}});
      j["halfspaces"] = hs;
      json vs = json::array();
      for (const auto& v : e.poly.vertices) vs.push_back(vec(v));
      j["vertices"] = vs;
    }
    elems.push_back(j);
  }
  json junctions = json::array();
  for (const auto& p : corr.junctions) junctions.push_back(vec(p));
  return {{"start", vec(corr.start)}, {"goal", vec(corr.goal)}, {"elements", elems},
          {"junctions", junctions}};
}

/// OBJ mesh of a polytope: vertices and triangulated faces.
inline void export_polytope_mesh(const ConvexPolytope& poly, const std::string& path) {
  if (path.empty()) throw Error(ErrorKind::io, "empty mesh path");
  const ConvexHull hull = quickhull(poly.vertices);
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path);
  out.precision(17);
  for (const auto& v : hull.points) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& f : hull.faces)
    out << "f " << f.v[0] + 1 << ' ' << f.v[1] + 1 << ' ' << f.v[2] + 1 << '\n';
  if (!out) throw Error(ErrorKind::io, "write failed for " + path);
}

}  // namespace scpvis
