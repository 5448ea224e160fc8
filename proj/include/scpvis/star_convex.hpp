#pragma once

#include "scpvis/error.hpp"
#include "scpvis/geometry.hpp"
#include "scpvis/pointcloud_map.hpp"
#include "scpvis/quickhull.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>
#include <fstream>
#include <sstream>
#include <string>

namespace scpvis {

/// Below this distance from the centre a point is treated as the centre.
inline constexpr double kCenterEps = 1e-6;

/**
 * Radial ball flip about `center`: a point at distance d maps to distance
 * 2r - d along the same ray. Flipped vectors are kept relative to the centre.
 */
struct FlipTransform {
  Vec3 center = Vec3::Zero();
  double flip_radius = 20.0;   // r
  double bound_radius = 6.0;   // R

  bool valid() const { return flip_radius > bound_radius && bound_radius > 0.0; }

  Vec3 flip(const Vec3& x) const {
    const Vec3 y = x - center;
    const double d = y.norm();
    if (d <= kCenterEps) {
      const Vec3 u = d > 0.0 ? Vec3(y / d) : Vec3::UnitX();
      return (2.0 * flip_radius - kCenterEps) * u;
    }
    return (2.0 * flip_radius - d) / d * y;
  }

  /// Inverse of flip(): flipped (centre-relative) vector back to world space.
  Vec3 unflip(const Vec3& xhat) const {
    const double m = xhat.norm();
    if (m <= 0.0) return center;
    return center + (2.0 * flip_radius - m) / m * xhat;
  }
};

inline Vec3 flip_point(const FlipTransform& t, const Vec3& x) { return t.flip(x); }

/**
 * Faces grouped by normal direction. Each group stores its faces contiguously
 * with a cone (axis, half-angle) containing the normals and the smallest
 * offset, which bounds n . x - b over the group from above.
 */
struct FaceClusters {
  Points axis;
  std::vector<double> cos_half, sin_half, min_offset;
  std::vector<int> begin;  // group g owns rows [begin[g], begin[g + 1])
  Eigen::Matrix<double, Eigen::Dynamic, 3> normals;
  Eigen::VectorXd offsets;

  bool empty() const { return axis.empty(); }

  /// Upper bound on n . x - b over group g.
  double bound(int g, const Vec3& x, double len) const {
    const double c = std::clamp(axis[static_cast<std::size_t>(g)].dot(x) / len, -1.0, 1.0);
    const double sphi = std::sqrt(std::max(0.0, 1.0 - c * c));
    // cos(phi - theta), or 1 when the cone already contains x
    const double ch = cos_half[static_cast<std::size_t>(g)], sh = sin_half[static_cast<std::size_t>(g)];
    const double best = c >= ch ? 1.0 : c * ch + sphi * sh;
    return len * best - min_offset[static_cast<std::size_t>(g)] + 1e-9 * len;
  }
};

namespace detail {

inline FaceClusters cluster_faces(const Eigen::Matrix<double, Eigen::Dynamic, 3>& normals,
                                  const Eigen::VectorXd& offsets) {
  FaceClusters fc;
  const auto k = normals.rows();
  if (k < 64) return fc;
  const Points centers = fibonacci_sphere(static_cast<int>(std::max<Eigen::Index>(8, k / 32)));
  const int c = static_cast<int>(centers.size());
  std::vector<int> owner(static_cast<std::size_t>(k));
  std::vector<std::vector<Eigen::Index>> members(static_cast<std::size_t>(c));
  for (Eigen::Index i = 0; i < k; ++i) {
    const Vec3 n = normals.row(i).transpose();
    int best = 0;
    for (int g = 1; g < c; ++g)
      if (centers[static_cast<std::size_t>(g)].dot(n) > centers[static_cast<std::size_t>(best)].dot(n)) best = g;
    members[static_cast<std::size_t>(best)].push_back(i);
  }
  fc.normals.resize(k, 3);
  fc.offsets.resize(k);
  int row = 0;
  for (int g = 0; g < c; ++g) {
    const auto& mem = members[static_cast<std::size_t>(g)];
    if (mem.empty()) continue;
    Vec3 axis = Vec3::Zero();
    for (auto i : mem) axis += normals.row(i).transpose();
    axis = axis.norm() > 1e-12 ? Vec3(axis.normalized()) : centers[static_cast<std::size_t>(g)];
    double cmin = 1.0, bmin = std::numeric_limits<double>::infinity();
    fc.begin.push_back(row);
    for (auto i : mem) {
      cmin = std::min(cmin, axis.dot(normals.row(i).transpose()));
      bmin = std::min(bmin, offsets[i]);
      fc.normals.row(row) = normals.row(i);
      fc.offsets[row] = offsets[i];
      ++row;
    }
    // widen the cone slightly against rounding in the angle
    const double theta = std::min(M_PI, std::acos(std::clamp(cmin, -1.0, 1.0)) + 1e-9);
    fc.axis.push_back(axis);
    fc.cos_half.push_back(std::cos(theta));
    fc.sin_half.push_back(std::sin(theta));
    fc.min_offset.push_back(bmin);
  }
  fc.begin.push_back(row);
  return fc;
}

}  // namespace detail

struct StarPolytope {
  Vec3 center = Vec3::Zero();
  FlipTransform transform;
  Eigen::Matrix<double, Eigen::Dynamic, 3> normals;  // K x 3 unit outer normals
  Eigen::VectorXd offsets;                           // b_k = n_k . a_k
  Points face_points;                                // a_k
  std::vector<std::array<int, 3>> faces;             // into hull_vertices
  Points hull_vertices;                              // flipped, centre-relative
  Points scp_vertices;                               // world space
  double augment_radius = 0.0;  // world radius of the closing sphere samples
  std::size_t local_point_count = 0;
  FaceClusters clusters;  // acceleration for the smooth distance, may be empty

  std::size_t face_count() const { return static_cast<std::size_t>(offsets.size()); }
};

/**
 * Star-convex polytope of the space visible from `center` within
 * `bound_radius`.
 *
 * Local map points and `augment_count` samples of the bound sphere are
 * flipped and their convex hull taken. Between sphere samples the hull bulges
 * slightly past R, so membership is additionally cut by the bound ball.
 */
inline StarPolytope build_scp(const PointCloudMap& map, const Vec3& center,
                              double bound_radius, double flip_radius,
                              int augment_count) {
  FlipTransform t{center, flip_radius, bound_radius};
  if (!t.valid())
    throw Error(ErrorKind::input, "need flip_radius > bound_radius > 0");
  if (augment_count < 32)
    throw Error(ErrorKind::input, "augment_count must be at least 32");

  const double aug_mag = 2.0 * flip_radius - bound_radius;

  Points flipped;
  map.index().for_each_in_radius(center, bound_radius, [&](std::uint32_t i) {
    const Vec3 y = map.points()[i] - center;
    const double d = y.norm();
    if (d > kCenterEps) flipped.push_back((2.0 * flip_radius - d) / d * y);
  });
  const std::size_t local = flipped.size();
  for (const auto& u : fibonacci_sphere(augment_count)) flipped.push_back(aug_mag * u);

  const ConvexHull hull = quickhull(flipped);

  StarPolytope scp;
  scp.center = center;
  scp.transform = t;
  scp.augment_radius = 2.0 * flip_radius - aug_mag;
  scp.local_point_count = local;

  std::vector<int> remap(hull.points.size(), -1);
  for (int v : hull.vertices) {
    remap[v] = static_cast<int>(scp.hull_vertices.size());
    scp.hull_vertices.push_back(hull.points[v]);
    scp.scp_vertices.push_back(t.unflip(hull.points[v]));
  }
  const auto k = static_cast<Eigen::Index>(hull.faces.size());
  scp.normals.resize(k, 3);
  scp.offsets.resize(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const HullFace& f = hull.faces[static_cast<std::size_t>(i)];
    const Vec3& a = hull.points[f.v[0]];
    scp.normals.row(i) = f.normal.transpose();
    scp.offsets[i] = f.normal.dot(a);
    scp.face_points.push_back(a);
    scp.faces.push_back({remap[f.v[0]], remap[f.v[1]], remap[f.v[2]]});
  }
  scp.clusters = detail::cluster_faces(scp.normals, scp.offsets);
  return scp;
}

/// Signed distances d_k = n_k . (x_hat - a_k) for all faces.
inline Eigen::VectorXd face_distances(const StarPolytope& scp, const Vec3& x) {
  const Vec3 xh = scp.transform.flip(x);
  return scp.normals * xh - scp.offsets;
}

/// Visible iff inside the bound ball and the flipped point is strictly
/// outside some face plane.
inline bool point_in_scp(const StarPolytope& scp, const Vec3& x) {
  const double d = (x - scp.center).norm();
  if (d <= kCenterEps) return true;
  if (d >= scp.transform.bound_radius) return false;
  return face_distances(scp, x).maxCoeff() > 0.0;
}

/// Overflow-safe log-sum-exp of alpha-scaled distances, divided by alpha.
inline double log_sum_exp(const Eigen::VectorXd& d, double alpha) {
  const double m = d.maxCoeff();
  return m + std::log((alpha * (d.array() - m)).exp().sum()) / alpha;
}

inline double lse_distance(const StarPolytope& scp, const Vec3& x, double alpha) {
  return log_sum_exp(face_distances(scp, x), alpha);
}

namespace detail {

/**
 * Max face distance m, sum_k exp(alpha (d_k - m)) and sum_k w_k n_k over the
 * faces that matter: terms below exp(-60) cannot change the sum in double
 * precision, and whole face groups whose bound already falls below that are
 * skipped.
 */
inline void lse_terms(const StarPolytope& scp, const Vec3& xh, double alpha, double& m,
                      double& sum, Vec3& g_hat) {
  const double cut = 60.0 / alpha;
  sum = 0.0;
  g_hat.setZero();
  const FaceClusters& fc = scp.clusters;
  if (fc.empty()) {
    const Eigen::VectorXd dist = scp.normals * xh - scp.offsets;
    m = dist.maxCoeff();
    for (Eigen::Index k = 0; k < dist.size(); ++k) {
      const double z = alpha * (dist[k] - m);
      if (z < -60.0) continue;
      const double w = std::exp(z);
      sum += w;
      g_hat += w * scp.normals.row(k).transpose();
    }
    return;
  }
  const int groups = static_cast<int>(fc.axis.size());
  const double len = xh.norm();
  thread_local std::vector<std::pair<double, int>> order;
  thread_local std::vector<std::pair<double, int>> kept;  // (distance, row)
  order.clear();
  kept.clear();
  for (int g = 0; g < groups; ++g) order.emplace_back(fc.bound(g, xh, len), g);
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    return a.first > b.first || (a.first == b.first && a.second < b.second);
  });
  m = -std::numeric_limits<double>::infinity();
  for (const auto& [bound, g] : order) {
    if (bound < m - cut) break;
    for (int row = fc.begin[static_cast<std::size_t>(g)]; row < fc.begin[static_cast<std::size_t>(g) + 1]; ++row) {
      const double dk = fc.normals.row(row).dot(xh) - fc.offsets[row];
      kept.emplace_back(dk, row);
      m = std::max(m, dk);
    }
  }
  for (const auto& [dk, row] : kept) {
    const double z = alpha * (dk - m);
    if (z < -60.0) continue;
    const double w = std::exp(z);
    sum += w;
    g_hat += w * fc.normals.row(row).transpose();
  }
}

}  // namespace detail

struct Violation {
  double value = 0.0;
  Vec3 gradient = Vec3::Zero();
  double lse_hat = 0.0;      // d_min - LSE
  double ball_excess = 0.0;  // |x - c| - (R - d_min)
};

/**
 * Cubic visibility violation lambda * max(d_min - LSE, 0)^3 and its gradient
 * w.r.t. the world-space point, chained through the flip Jacobian
 *   J = (2r - d)/d I - 2r/d^3 y y^T,  y = x - c.
 * The bound ball adds lambda * max(|y| - (R - d_min), 0)^3.
 */
inline Violation visibility_violation(const StarPolytope& scp, const Vec3& x,
                                      double d_min, double alpha, double lambda) {
  Violation out;
  const Vec3 y = x - scp.center;
  const double d = y.norm();
  if (d <= kCenterEps) {
    out.lse_hat = -std::numeric_limits<double>::infinity();
    out.ball_excess = d - (scp.transform.bound_radius - d_min);
    return out;
  }
  out.ball_excess = d - (scp.transform.bound_radius - d_min);
  if (out.ball_excess > 0.0) {
    const double e = out.ball_excess;
    out.value += lambda * e * e * e;
    out.gradient += 3.0 * lambda * e * e / d * y;
  }
  const double r = scp.transform.flip_radius;
  const Vec3 xh = (2.0 * r - d) / d * y;
  double m = 0.0, sum = 0.0;
  Vec3 g_hat = Vec3::Zero();
  detail::lse_terms(scp, xh, alpha, m, sum, g_hat);
  const double lse = m + std::log(sum) / alpha;
  out.lse_hat = d_min - lse;
  if (out.lse_hat <= 0.0) return out;
  out.value += lambda * out.lse_hat * out.lse_hat * out.lse_hat;
  g_hat /= sum;
  const Vec3 g_lse = (2.0 * r - d) / d * g_hat - (2.0 * r / (d * d * d)) * y.dot(g_hat) * y;
  out.gradient -= 3.0 * lambda * out.lse_hat * out.lse_hat * g_lse;
  return out;
}

// ---------------------------------------------------------------------------
// OBJ mesh export

inline void export_scp_mesh(const StarPolytope& scp, const std::string& path) {
  if (path.empty()) throw Error(ErrorKind::io, "empty mesh path");
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path);
  out.precision(17);
  for (const auto& v : scp.scp_vertices)
    out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& f : scp.faces)
    out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
  if (!out) throw Error(ErrorKind::io, "write failed for " + path);
}

struct TriangleMesh {
  Points vertices;
  std::vector<std::array<int, 3>> faces;  // 0-based
};

inline TriangleMesh read_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path);
  TriangleMesh mesh;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "v") {
      double x, y, z;
      if (!(ls >> x >> y >> z))
        throw Error(ErrorKind::parse, "bad vertex at line " + std::to_string(line_no));
      mesh.vertices.emplace_back(x, y, z);
    } else if (tag == "f") {
      std::array<int, 3> f{};
      for (auto& i : f) {
        std::string tok;
        if (!(ls >> tok))
          throw Error(ErrorKind::parse, "bad face at line " + std::to_string(line_no));
        i = std::stoi(tok.substr(0, tok.find('/'))) - 1;
      }
      mesh.faces.push_back(f);
    }
  }
  return mesh;
}

}  // namespace scpvis
