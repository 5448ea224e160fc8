#pragma once

#include "scpvis/error.hpp"
#include "scpvis/geometry.hpp"

#include <Eigen/Eigenvalues>

#include <array>
#include <cstdint>
#include <random>
#include <unordered_map>

namespace scpvis {

struct HullFace {
  std::array<int, 3> v;  // counter-clockwise seen from outside
  Vec3 normal;           // unit outer normal
  double offset;         // normal . v[0]
};

struct ConvexHull {
  Points points;                 // the (possibly joggled) input the faces index
  std::vector<HullFace> faces;
  std::vector<int> vertices;     // sorted indices of points on the hull
};

namespace detail {

class QuickHullBuilder {
 public:
  QuickHullBuilder(const Points& pts, double tol) : pts_(pts), tol_(tol) {}

  /// Returns false when the input is numerically degenerate for this pass.
  bool run(std::vector<HullFace>& out) {
    if (!initial_simplex()) return false;
    std::vector<int> work;
    for (int f = 0; f < static_cast<int>(faces_.size()); ++f) work.push_back(f);
    while (!work.empty()) {
      const int f = work.back();
      work.pop_back();
      if (!faces_[f].alive || faces_[f].outside.empty()) continue;
      int eye = -1;
      double best = -1.0;
      for (int p : faces_[f].outside) {
        const double d = dist(faces_[f], pts_[p]);
        if (d > best) {
          best = d;
          eye = p;
        }
      }
      const std::size_t before = faces_.size();
      if (!add_point(f, eye)) return false;
      for (std::size_t g = before; g < faces_.size(); ++g) work.push_back(static_cast<int>(g));
    }
    out.clear();
    for (const auto& f : faces_) {
      if (f.alive) out.push_back(HullFace{f.v, f.n, f.off});
    }
    return true;
  }

 private:
  struct Face {
    std::array<int, 3> v;
    std::array<int, 3> nbr{-1, -1, -1};
    Vec3 n;
    double off = 0.0;
    std::vector<int> outside;
    bool alive = true;
    int mark = -1;
  };

  double dist(const Face& f, const Vec3& p) const { return f.n.dot(p) - f.off; }

  bool make_plane(Face& f) const {
    const Vec3& a = pts_[f.v[0]];
    const Vec3 n = (pts_[f.v[1]] - a).cross(pts_[f.v[2]] - a);
    const double len = n.norm();
    if (!(len > 0.0) || !std::isfinite(len)) return false;
    f.n = n / len;
    // centroid offset is better conditioned than a single vertex
    f.off = f.n.dot((pts_[f.v[0]] + pts_[f.v[1]] + pts_[f.v[2]]) / 3.0);
    return true;
  }

  static int edge_index(const Face& f, int a, int b) {
    for (int i = 0; i < 3; ++i)
      if (f.v[i] == a && f.v[(i + 1) % 3] == b) return i;
    return -1;
  }

  bool initial_simplex() {
    const int n = static_cast<int>(pts_.size());
    if (n < 4) return false;
    std::array<int, 6> ext{0, 0, 0, 0, 0, 0};
    for (int i = 1; i < n; ++i) {
      for (int k = 0; k < 3; ++k) {
        if (pts_[i][k] < pts_[ext[2 * k]][k]) ext[2 * k] = i;
        if (pts_[i][k] > pts_[ext[2 * k + 1]][k]) ext[2 * k + 1] = i;
      }
    }
    int i0 = ext[0], i1 = ext[1];
    double best = -1.0;
    for (int a = 0; a < 6; ++a)
      for (int b = a + 1; b < 6; ++b) {
        const double d = (pts_[ext[a]] - pts_[ext[b]]).squaredNorm();
        if (d > best) {
          best = d;
          i0 = ext[a];
          i1 = ext[b];
        }
      }
    if (std::sqrt(best) <= tol_) return false;

    const Vec3 dir = (pts_[i1] - pts_[i0]).normalized();
    int i2 = -1;
    best = tol_;
    for (int i = 0; i < n; ++i) {
      const Vec3 w = pts_[i] - pts_[i0];
      const double d = (w - w.dot(dir) * dir).norm();
      if (d > best) {
        best = d;
        i2 = i;
      }
    }
    if (i2 < 0) return false;

    const Vec3 pn = (pts_[i1] - pts_[i0]).cross(pts_[i2] - pts_[i0]).normalized();
    int i3 = -1;
    best = tol_;
    for (int i = 0; i < n; ++i) {
      const double d = std::abs(pn.dot(pts_[i] - pts_[i0]));
      if (d > best) {
        best = d;
        i3 = i;
      }
    }
    if (i3 < 0) return false;

    const std::array<int, 4> s{i0, i1, i2, i3};
    const Vec3 centroid = (pts_[i0] + pts_[i1] + pts_[i2] + pts_[i3]) / 4.0;
    const std::array<std::array<int, 3>, 4> tris{
        {{s[0], s[1], s[2]}, {s[0], s[3], s[1]}, {s[1], s[3], s[2]}, {s[2], s[3], s[0]}}};
    for (const auto& t : tris) {
      Face f;
      f.v = t;
      if (!make_plane(f)) return false;
      if (dist(f, centroid) > 0.0) {
        std::swap(f.v[1], f.v[2]);
        if (!make_plane(f)) return false;
      }
      faces_.push_back(std::move(f));
    }
    for (int a = 0; a < 4; ++a)
      for (int e = 0; e < 3; ++e) {
        const int u = faces_[a].v[e], w = faces_[a].v[(e + 1) % 3];
        for (int b = 0; b < 4; ++b) {
          if (b == a) continue;
          if (edge_index(faces_[b], w, u) >= 0) faces_[a].nbr[e] = b;
        }
        if (faces_[a].nbr[e] < 0) return false;
      }

    for (int i = 0; i < n; ++i) {
      if (i == i0 || i == i1 || i == i2 || i == i3) continue;
      assign(i, 0, 4);
    }
    return true;
  }

  void assign(int p, int first_face, int end_face) {
    int best_face = -1;
    double best = tol_;
    for (int f = first_face; f < end_face; ++f) {
      if (!faces_[f].alive) continue;
      const double d = dist(faces_[f], pts_[p]);
      if (d > best) {
        best = d;
        best_face = f;
      }
    }
    if (best_face >= 0) faces_[best_face].outside.push_back(p);
  }

  bool add_point(int start, int eye) {
    ++stamp_;
    const Vec3& e = pts_[eye];
    struct HorizonEdge {
      int a, b, face;
    };
    std::vector<int> visible;
    std::vector<HorizonEdge> horizon;
    std::vector<int> stack{start};
    faces_[start].mark = stamp_;
    while (!stack.empty()) {
      const int f = stack.back();
      stack.pop_back();
      visible.push_back(f);
      for (int i = 0; i < 3; ++i) {
        const int g = faces_[f].nbr[i];
        if (g < 0) return false;
        if (faces_[g].mark == stamp_) continue;
        if (dist(faces_[g], e) > tol_) {
          faces_[g].mark = stamp_;
          stack.push_back(g);
        } else {
          horizon.push_back({faces_[f].v[i], faces_[f].v[(i + 1) % 3], g});
        }
      }
    }
    // a horizon face can be flagged visible later through another path; drop
    // those edges since they are interior to the visible region
    std::vector<HorizonEdge> clean;
    for (const auto& h : horizon)
      if (faces_[h.face].mark != stamp_) clean.push_back(h);
    if (clean.size() < 3) return false;

    std::unordered_map<int, int> starts;
    std::unordered_map<int, int> ends;
    for (const auto& h : clean) {
      if (!starts.emplace(h.a, 0).second) return false;
      if (!ends.emplace(h.b, 0).second) return false;
    }

    const int first_new = static_cast<int>(faces_.size());
    for (const auto& h : clean) {
      Face f;
      f.v = {h.a, h.b, eye};
      if (!make_plane(f)) return false;
      f.nbr[0] = h.face;
      const int id = static_cast<int>(faces_.size());
      const int j = edge_index(faces_[h.face], h.b, h.a);
      if (j < 0) return false;
      faces_[h.face].nbr[j] = id;
      starts[h.a] = id;
      faces_.push_back(std::move(f));
    }
    for (int id = first_new; id < static_cast<int>(faces_.size()); ++id) {
      const auto it = starts.find(faces_[id].v[1]);
      if (it == starts.end()) return false;
      faces_[id].nbr[1] = it->second;
      faces_[it->second].nbr[2] = id;
    }

    const int end_new = static_cast<int>(faces_.size());
    for (int f : visible) {
      faces_[f].alive = false;
      std::vector<int> orphans;
      orphans.swap(faces_[f].outside);
      for (int p : orphans)
        if (p != eye) assign(p, first_new, end_new);
    }
    return true;
  }

  const Points& pts_;
  double tol_;
  std::vector<Face> faces_;
  int stamp_ = 0;
};

inline bool hull_is_valid(const ConvexHull& hull, double tol) {
  if (hull.faces.size() < 4) return false;
  for (const auto& f : hull.faces) {
    if (!f.normal.allFinite() || std::abs(f.normal.norm() - 1.0) > 1e-9) return false;
    for (int v : hull.vertices)
      if (f.normal.dot(hull.points[v]) - f.offset > tol) return false;
  }
  return true;
}

}  // namespace detail

/**
 * 3D quickhull. Faces are triangles (coplanar facets are not merged).
 *
 * Numerically degenerate passes are retried on deterministically joggled
 * copies of the input with growing perturbation; the returned `points`
 * always hold the coordinates the faces were computed on. Throws
 * ErrorKind::construction if the input spans no volume.
 */
inline ConvexHull quickhull(const Points& input) {
  double scale = 0.0;
  for (int k = 0; k < 3; ++k) {
    double m = 0.0;
    for (const auto& p : input) m = std::max(m, std::abs(p[k]));
    scale += m;
  }
  scale = std::max(scale, 1e-300);
  const double tol = 1e-12 * scale;

  // joggling would inflate a flat input into a sliver, so reject it up front
  if (input.size() < 4)
    throw Error(ErrorKind::construction, "convex hull needs at least 4 points");
  Vec3 mean = Vec3::Zero();
  for (const auto& p : input) mean += p;
  mean /= static_cast<double>(input.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& p : input) cov += (p - mean) * (p - mean).transpose();
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
  const Vec3 thin = eig.eigenvectors().col(0);
  double thickness = 0.0;
  for (const auto& p : input) thickness = std::max(thickness, std::abs((p - mean).dot(thin)));
  if (thickness <= 1e-9 * scale)
    throw Error(ErrorKind::construction, "degenerate point set: convex hull has no volume");

  std::mt19937_64 rng(0x5eedu);
  for (int attempt = 0; attempt < 5; ++attempt) {
    ConvexHull hull;
    hull.points = input;
    if (attempt > 0) {
      const double mag = scale * std::pow(10.0, -11.0 + 2.0 * attempt);
      std::uniform_real_distribution<double> u(-mag, mag);
      for (auto& p : hull.points) p += Vec3(u(rng), u(rng), u(rng));
    }
    detail::QuickHullBuilder builder(hull.points, tol);
    if (!builder.run(hull.faces)) continue;
    std::vector<char> on(hull.points.size(), 0);
    for (const auto& f : hull.faces)
      for (int v : f.v) on[v] = 1;
    for (int i = 0; i < static_cast<int>(on.size()); ++i)
      if (on[i]) hull.vertices.push_back(i);
    if (detail::hull_is_valid(hull, 1e-9)) return hull;
  }
  throw Error(ErrorKind::construction, "degenerate point set: convex hull has no volume");
}

}  // namespace scpvis
