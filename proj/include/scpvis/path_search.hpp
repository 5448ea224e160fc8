#pragma once

#include "scpvis/error.hpp"
#include "scpvis/geometry.hpp"
#include "scpvis/pointcloud_map.hpp"

#include <array>
#include <queue>
#include <sstream>
#include <vector>

namespace scpvis {

/// Polyline through voxel centres; the first and last entries are the exact
/// query endpoints.
struct GridPath {
  Points waypoints;
  double length = 0.0;
};

inline double polyline_length(const Points& pts) {
  double s = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) s += (pts[i] - pts[i - 1]).norm();
  return s;
}

namespace detail {

inline std::string fmt_point(const Vec3& p) {
  std::ostringstream os;
  os << '(' << p.x() << ", " << p.y() << ", " << p.z() << ')';
  return os.str();
}

/// Free voxel nearest to `p` within `reach` voxels (Chebyshev), if any.
inline std::optional<Eigen::Vector3i> snap_to_free(const VoxelGrid& grid, const Vec3& p,
                                                   int reach) {
  const Eigen::Vector3i v = grid.world_to_voxel(p);
  if (!grid.occupied(v)) return v;
  std::optional<Eigen::Vector3i> best;
  double best_d = std::numeric_limits<double>::infinity();
  for (int dz = -reach; dz <= reach; ++dz)
    for (int dy = -reach; dy <= reach; ++dy)
      for (int dx = -reach; dx <= reach; ++dx) {
        const Eigen::Vector3i n = v + Eigen::Vector3i(dx, dy, dz);
        if (grid.occupied(n)) continue;
        const double d = (grid.voxel_center(n) - p).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = n;
        }
      }
  return best;
}

struct Move {
  Eigen::Vector3i step;
  double cost;  // in voxels
};

inline const std::vector<Move>& moves26() {
  static const std::vector<Move> m = [] {
    std::vector<Move> out;
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          if (!dx && !dy && !dz) continue;
          out.push_back({Eigen::Vector3i(dx, dy, dz),
                         std::sqrt(static_cast<double>(dx * dx + dy * dy + dz * dz))});
        }
    return out;
  }();
  return m;
}

/// A diagonal move may not squeeze past occupied voxels: every voxel of the
/// box spanned by the move must be free.
inline bool move_allowed(const VoxelGrid& grid, const Eigen::Vector3i& from,
                         const Eigen::Vector3i& step) {
  for (int sz = 0; sz <= std::abs(step.z()); ++sz)
    for (int sy = 0; sy <= std::abs(step.y()); ++sy)
      for (int sx = 0; sx <= std::abs(step.x()); ++sx) {
        const Eigen::Vector3i n = from + Eigen::Vector3i(sx * step.x(), sy * step.y(), sz * step.z());
        if (grid.occupied(n)) return false;
      }
  return true;
}

}  // namespace detail

/**
 * Shortest 26-connected voxel path by A* with the Euclidean heuristic.
 * Endpoints in occupied voxels are snapped to the nearest free voxel within
 * two voxels. Equal f-values expand the node with the smaller heuristic first.
 */
inline GridPath find_path(const VoxelGrid& grid, const Vec3& from, const Vec3& to) {
  const auto unreachable = [&](const std::string& why) {
    return Error(ErrorKind::unreachable, "no path from " + detail::fmt_point(from) + " to " +
                                             detail::fmt_point(to) + ": " + why);
  };
  const auto s = detail::snap_to_free(grid, from, 2);
  const auto g = detail::snap_to_free(grid, to, 2);
  if (!s) throw unreachable("start is not near a free voxel");
  if (!g) throw unreachable("goal is not near a free voxel");

  const std::size_t n = grid.cell_count();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> cost(n, inf);
  std::vector<std::int64_t> parent(n, -1);
  std::vector<char> closed(n, 0);

  struct Entry {
    double f, h;
    std::size_t id;
    bool operator>(const Entry& o) const { return f > o.f || (f == o.f && h > o.h); }
  };
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> open;
  auto heuristic = [&](const Eigen::Vector3i& v) {
    return (v - *g).cast<double>().norm();
  };
  const std::size_t sid = grid.linear(*s), gid = grid.linear(*g);
  cost[sid] = 0.0;
  open.push({heuristic(*s), heuristic(*s), sid});
  bool found = false;
  while (!open.empty()) {
    const Entry e = open.top();
    open.pop();
    if (closed[e.id]) continue;
    closed[e.id] = 1;
    if (e.id == gid) {
      found = true;
      break;
    }
    const Eigen::Vector3i v = grid.unlinear(e.id);
    for (const auto& m : detail::moves26()) {
      const Eigen::Vector3i nb = v + m.step;
      if (!grid.in_bounds(nb)) continue;
      const std::size_t nid = grid.linear(nb);
      if (closed[nid] || !detail::move_allowed(grid, v, m.step)) continue;
      const double c = cost[e.id] + m.cost;
      if (c < cost[nid]) {
        cost[nid] = c;
        parent[nid] = static_cast<std::int64_t>(e.id);
        const double h = heuristic(nb);
        open.push({c + h, h, nid});
      }
    }
  }
  if (!found) throw unreachable("search space exhausted");

  GridPath path;
  std::vector<std::size_t> chain;
  for (std::int64_t id = static_cast<std::int64_t>(gid); id >= 0; id = parent[static_cast<std::size_t>(id)])
    chain.push_back(static_cast<std::size_t>(id));
  path.waypoints.push_back(from);
  for (auto it = chain.rbegin(); it != chain.rend(); ++it)
    path.waypoints.push_back(grid.voxel_center(grid.unlinear(*it)));
  path.waypoints.push_back(to);
  path.length = polyline_length(path.waypoints);
  return path;
}

/**
 * Greedy shortcutting: from each kept waypoint jump to the farthest later one
 * whose connecting segment is clear. Adjacent waypoints are always kept
 * connected, so a blocked path comes back unchanged.
 */
inline GridPath shortcut_path(const PointCloudMap& map, const GridPath& path, double clearance) {
  GridPath out;
  const Points& w = path.waypoints;
  if (w.size() <= 2) {
    out = path;
    out.length = polyline_length(out.waypoints);
    return out;
  }
  std::size_t i = 0;
  out.waypoints.push_back(w.front());
  while (i + 1 < w.size()) {
    std::size_t next = i + 1;
    for (std::size_t j = w.size() - 1; j > i + 1; --j)
      if (segment_clear(map, w[i], w[j], clearance)) {
        next = j;
        break;
      }
    out.waypoints.push_back(w[next]);
    i = next;
  }
  out.length = polyline_length(out.waypoints);
  return out;
}

}  // namespace scpvis
