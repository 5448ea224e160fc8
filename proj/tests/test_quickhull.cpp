#include "scpvis/quickhull.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace scpvis;

namespace {

void expect_contains_all(const ConvexHull& hull, double tol) {
  for (const auto& f : hull.faces) {
    EXPECT_NEAR(f.normal.norm(), 1.0, 1e-12);
    for (const auto& p : hull.points) EXPECT_LE(f.normal.dot(p) - f.offset, tol);
  }
}

/// Closed triangulated surface: V - E + F = 2, every edge shared by two faces.
void expect_closed_manifold(const ConvexHull& hull) {
  std::multiset<std::pair<int, int>> directed;
  for (const auto& f : hull.faces)
    for (int i = 0; i < 3; ++i) directed.insert({f.v[i], f.v[(i + 1) % 3]});
  for (const auto& [a, b] : directed) {
    EXPECT_EQ(directed.count({a, b}), 1u);
    EXPECT_EQ(directed.count({b, a}), 1u);
  }
  const long v = static_cast<long>(hull.vertices.size());
  const long f = static_cast<long>(hull.faces.size());
  const long e = static_cast<long>(directed.size()) / 2;
  EXPECT_EQ(v - e + f, 2);
}

}  // namespace

TEST(QuickHull, CubeWithInteriorPoints) {
  Points pts;
  for (int c = 0; c < 8; ++c)
    pts.emplace_back((c & 1) ? 1.0 : -1.0, (c & 2) ? 1.0 : -1.0, (c & 4) ? 1.0 : -1.0);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 200; ++i)
    pts.push_back(test::uniform_in_box(rng, Vec3::Constant(-0.9), Vec3::Constant(0.9)));
  const ConvexHull hull = quickhull(pts);
  EXPECT_EQ(hull.vertices.size(), 8u);
  EXPECT_EQ(hull.faces.size(), 12u);
  for (int v : hull.vertices) EXPECT_LT(v, 8);
  expect_contains_all(hull, 1e-12);
  expect_closed_manifold(hull);
}

TEST(QuickHull, SpherePointsAreAllVertices) {
  const Points dirs = fibonacci_sphere(256);
  const ConvexHull hull = quickhull(dirs);
  EXPECT_EQ(hull.vertices.size(), 256u);
  EXPECT_EQ(hull.faces.size(), 2u * 256 - 4);
  expect_contains_all(hull, 1e-12);
  expect_closed_manifold(hull);
}

TEST(QuickHull, RandomCloudsSupportPointsAreVertices) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    Points pts;
    for (int i = 0; i < 500; ++i) pts.push_back(test::uniform_in_ball(rng, Vec3(3, -2, 1), 4.0));
    const ConvexHull hull = quickhull(pts);
    expect_contains_all(hull, 1e-9);
    expect_closed_manifold(hull);
    const std::set<int> verts(hull.vertices.begin(), hull.vertices.end());
    for (int d = 0; d < 200; ++d) {
      const Vec3 u = test::random_unit(rng);
      int best = 0;
      for (int i = 1; i < static_cast<int>(pts.size()); ++i)
        if (u.dot(pts[i]) > u.dot(pts[best])) best = i;
      EXPECT_TRUE(verts.count(best)) << "support point missing from hull";
    }
  }
}

TEST(QuickHull, DuplicatesAndNearCoplanarInput) {
  // a dense flat grid plus one apex: many coplanar points and exact duplicates
  Points pts;
  for (int i = 0; i <= 20; ++i)
    for (int j = 0; j <= 20; ++j) {
      pts.emplace_back(i * 0.1, j * 0.1, 0.0);
      pts.emplace_back(i * 0.1, j * 0.1, 0.0);
    }
  pts.emplace_back(1.0, 1.0, 1.0);
  const ConvexHull hull = quickhull(pts);
  expect_contains_all(hull, 1e-9);
  expect_closed_manifold(hull);
}

TEST(QuickHull, DegenerateInputThrows) {
  Points flat;
  for (int i = 0; i < 10; ++i) flat.emplace_back(i, 2.0 * i, 0.0);
  EXPECT_THROW(quickhull(flat), Error);
  Points planar;
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 10; ++j) planar.emplace_back(i, j, 0.0);
  EXPECT_THROW(quickhull(planar), Error);
  EXPECT_THROW(quickhull(Points{Vec3::Zero(), Vec3::UnitX(), Vec3::UnitY()}), Error);
}
