#pragma once

#include "scpvis/error.hpp"
#include "scpvis/geometry.hpp"
#include "scpvis/nlp_solver.hpp"
#include "scpvis/star_convex.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <vector>

namespace scpvis {

// ---------------------------------------------------------------------------
// Visiting order

/// Open tour start -> spots[order[0]] -> ... -> goal. `order` is 0-based.
struct Tour {
  std::vector<int> order;
  Vec3 start = Vec3::Zero();
  Vec3 goal = Vec3::Zero();
  double cost = 0.0;
};

/**
 * Cost matrix over nodes 0 = start, 1..N = spots, N+1 = goal.
 * Entry (i, j) is the cost of flying i -> j.
 */
inline Eigen::MatrixXd route_cost_matrix(const Points& spots, const Vec3& start,
                                         const Vec3& goal) {
  const int n = static_cast<int>(spots.size());
  auto node = [&](int i) -> const Vec3& {
    return i == 0 ? start : (i == n + 1 ? goal : spots[static_cast<std::size_t>(i - 1)]);
  };
  Eigen::MatrixXd c(n + 2, n + 2);
  for (int i = 0; i < n + 2; ++i)
    for (int j = 0; j < n + 2; ++j) c(i, j) = (node(i) - node(j)).norm();
  return c;
}

/// Cost of an order of spot indices (0-based) under a route cost matrix.
inline double tour_cost(const Eigen::MatrixXd& c, const std::vector<int>& order) {
  const int goal = static_cast<int>(c.rows()) - 1;
  double sum = 0.0;
  int prev = 0;
  for (int s : order) {
    sum += c(prev, s + 1);
    prev = s + 1;
  }
  return sum + c(prev, goal);
}

namespace detail {

/// Held-Karp over subsets; exact, used for small instances.
inline std::vector<int> held_karp(const Eigen::MatrixXd& c) {
  const int n = static_cast<int>(c.rows()) - 2;
  const std::size_t full = (std::size_t{1} << n);
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> best(full * static_cast<std::size_t>(n), inf);
  std::vector<int> parent(full * static_cast<std::size_t>(n), -1);
  auto at = [n](std::size_t mask, int last) { return mask * static_cast<std::size_t>(n) + last; };
  for (int j = 0; j < n; ++j) best[at(std::size_t{1} << j, j)] = c(0, j + 1);
  for (std::size_t mask = 1; mask < full; ++mask)
    for (int last = 0; last < n; ++last) {
      const double base = best[at(mask, last)];
      if (!(mask >> last & 1u) || base == inf) continue;
      for (int nxt = 0; nxt < n; ++nxt) {
        if (mask >> nxt & 1u) continue;
        const std::size_t m2 = mask | (std::size_t{1} << nxt);
        const double v = base + c(last + 1, nxt + 1);
        if (v < best[at(m2, nxt)]) {
          best[at(m2, nxt)] = v;
          parent[at(m2, nxt)] = last;
        }
      }
    }
  double opt = inf;
  int last = 0;
  for (int j = 0; j < n; ++j) {
    const double v = best[at(full - 1, j)] + c(j + 1, n + 1);
    if (v < opt) {
      opt = v;
      last = j;
    }
  }
  std::vector<int> order;
  std::size_t mask = full - 1;
  while (last >= 0) {
    order.push_back(last);
    const int p = parent[at(mask, last)];
    mask &= ~(std::size_t{1} << last);
    last = p;
  }
  std::reverse(order.begin(), order.end());
  return order;
}

/// Segment reversal and segment relocation until neither improves.
inline void local_search(const Eigen::MatrixXd& c, std::vector<int>& order) {
  const int n = static_cast<int>(order.size());
  double cur = tour_cost(c, order);
  const double eps = 1e-12;
  bool improved = true;
  while (improved) {
    improved = false;
    for (int i = 0; i < n && !improved; ++i)
      for (int j = i + 1; j < n && !improved; ++j) {
        std::reverse(order.begin() + i, order.begin() + j + 1);
        const double v = tour_cost(c, order);
        if (v < cur - eps) {
          cur = v;
          improved = true;
        } else {
          std::reverse(order.begin() + i, order.begin() + j + 1);
        }
      }
    for (int len = 1; len <= 3 && !improved; ++len)
      for (int i = 0; i + len <= n && !improved; ++i)
        for (int to = 0; to <= n - len && !improved; ++to) {
          if (to == i) continue;
          std::vector<int> cand(order);
          std::vector<int> seg(cand.begin() + i, cand.begin() + i + len);
          cand.erase(cand.begin() + i, cand.begin() + i + len);
          cand.insert(cand.begin() + to, seg.begin(), seg.end());
          const double v = tour_cost(c, cand);
          if (v < cur - eps) {
            cur = v;
            order.swap(cand);
            improved = true;
          }
        }
  }
}

}  // namespace detail

/// Instances up to this many spots are solved exactly.
inline constexpr int kExactTourLimit = 12;

/**
 * Visiting order for an open route from `start` to `goal`. Exact by dynamic
 * programming for small N; nearest-neighbour construction followed by
 * reversal and relocation moves otherwise.
 */
inline Tour solve_atsp(const Points& spots, const Vec3& start, const Vec3& goal) {
  Tour tour;
  tour.start = start;
  tour.goal = goal;
  const int n = static_cast<int>(spots.size());
  const Eigen::MatrixXd c = route_cost_matrix(spots, start, goal);
  if (n == 0) {
    tour.cost = c(0, 1);
    return tour;
  }
  if (n <= kExactTourLimit) {
    tour.order = detail::held_karp(c);
  } else {
    std::vector<char> used(static_cast<std::size_t>(n), 0);
    int prev = 0;
    for (int k = 0; k < n; ++k) {
      int pick = -1;
      for (int j = 0; j < n; ++j)
        if (!used[j] && (pick < 0 || c(prev, j + 1) < c(prev, pick + 1))) pick = j;
      used[pick] = 1;
      tour.order.push_back(pick);
      prev = pick + 1;
    }
    detail::local_search(c, tour.order);
  }
  tour.cost = tour_cost(c, tour.order);
  return tour;
}

// ---------------------------------------------------------------------------
// Waypoint refinement

struct RefineOptions {
  double d_min = 0.1;
  double alpha = 100.0;
  double lambda = 1e4;          // initial entry of every penalty weight
  double epsilon = 1e-4;        // m^2, smooths the leg lengths
  double feasibility_tol = 1e-4;
  int max_restarts = 16;
  Aabb bounds;                  // workspace box kept d_min clear, empty means unbounded
  SolveOptions solver = [] {
    SolveOptions o;
    o.max_iterations = 3000;
    o.gradient_tolerance = 1e-5;
    return o;
  }();
};

struct WaypointSet {
  Points waypoints;  // w_1..w_N in tour order
  Vec3 start = Vec3::Zero();
  Vec3 goal = Vec3::Zero();
  std::vector<double> penalty_weights;
  double epsilon = 1e-4;
  double initial_length = 0.0;
  double final_length = 0.0;
  int restarts = 0;
  SolveStatus status = SolveStatus::converged;
};

/// Sum of sqrt(|w_i - w_{i-1}|^2 + eps) over start, waypoints, goal.
inline double smooth_route_length(const Points& w, const Vec3& start, const Vec3& goal,
                                  double epsilon) {
  double sum = 0.0;
  Vec3 prev = start;
  for (const auto& p : w) {
    sum += std::sqrt((p - prev).squaredNorm() + epsilon);
    prev = p;
  }
  return sum + std::sqrt((goal - prev).squaredNorm() + epsilon);
}

/// J_w over the stacked waypoints, with its gradient.
inline Objective waypoint_objective(const std::vector<const StarPolytope*>& scps,
                                    const Vec3& start, const Vec3& goal,
                                    const std::vector<double>& weights,
                                    const RefineOptions& opts) {
  return [&scps, start, goal, weights, opts](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    const int n = static_cast<int>(scps.size());
    g.setZero(x.size());
    auto w = [&](int i) -> Vec3 {
      if (i == 0) return start;
      if (i == n + 1) return goal;
      return x.segment<3>(3 * (i - 1));
    };
    double f = 0.0;
    for (int i = 1; i <= n + 1; ++i) {
      const Vec3 e = w(i) - w(i - 1);
      const double len = std::sqrt(e.squaredNorm() + opts.epsilon);
      f += len;
      if (i <= n) g.segment<3>(3 * (i - 1)) += e / len;
      if (i >= 2) g.segment<3>(3 * (i - 2)) -= e / len;
    }
    for (int i = 0; i < n; ++i) {
      const Violation v = visibility_violation(*scps[static_cast<std::size_t>(i)],
                                               x.segment<3>(3 * i), opts.d_min, opts.alpha,
                                               weights[static_cast<std::size_t>(i)]);
      f += v.value;
      g.segment<3>(3 * i) += v.gradient;
    }
    if (!opts.bounds.empty()) {
      for (int i = 0; i < n; ++i)
        for (int a = 0; a < 3; ++a) {
          const double lo = opts.bounds.min[a] + opts.d_min - x[3 * i + a];
          const double hi = x[3 * i + a] - (opts.bounds.max[a] - opts.d_min);
          const double lam = weights[static_cast<std::size_t>(i)];
          if (lo > 0.0) {
            f += lam * lo * lo * lo;
            g[3 * i + a] -= 3.0 * lam * lo * lo;
          }
          if (hi > 0.0) {
            f += lam * hi * hi * hi;
            g[3 * i + a] += 3.0 * lam * hi * hi;
          }
        }
    }
    return f;
  };
}

namespace detail {

inline bool waypoint_feasible(const StarPolytope& scp, const Vec3& w, const RefineOptions& o,
                              double tol) {
  const Violation v = visibility_violation(scp, w, o.d_min, o.alpha, 0.0);
  const bool boxed = o.bounds.empty() || o.bounds.contains(w, tol - o.d_min);
  return boxed && point_in_scp(scp, w) && v.lse_hat <= tol && v.ball_excess <= tol;
}

/// First point on the chord from `from` to the centre that is feasible with
/// full margin, refined by bisection.
inline Vec3 initial_waypoint(const StarPolytope& scp, const Vec3& from, const RefineOptions& o) {
  const Vec3 c = scp.center;
  const double len = (c - from).norm();
  auto ok = [&](double t) { return waypoint_feasible(scp, from + t * (c - from), o, 0.0); };
  if (len > kCenterEps) {
    const int steps = std::max(1, static_cast<int>(std::ceil(len / 0.05)));
    for (int k = 0; k <= steps; ++k) {
      const double t = static_cast<double>(k) / steps;
      if (!ok(t)) continue;
      if (k == 0) return from;
      double lo = static_cast<double>(k - 1) / steps, hi = t;
      for (int it = 0; it < 40; ++it) {
        const double mid = 0.5 * (lo + hi);
        (ok(mid) ? hi : lo) = mid;
      }
      return from + hi * (c - from);
    }
  }
  return c + Vec3::Constant(1e-3);
}

}  // namespace detail

/**
 * One waypoint per SCP minimising smoothed route length plus visibility
 * violation. Weights of infeasible waypoints are doubled and the solve
 * resumed from the last iterate until every waypoint is feasible.
 */
inline WaypointSet refine_waypoints(const std::vector<const StarPolytope*>& scps,
                                    const Vec3& start, const Vec3& goal,
                                    const RefineOptions& opts = {}) {
  if (scps.empty()) throw Error(ErrorKind::input, "refine_waypoints needs at least one SCP");
  const int n = static_cast<int>(scps.size());
  WaypointSet ws;
  ws.start = start;
  ws.goal = goal;
  ws.epsilon = opts.epsilon;
  ws.penalty_weights.assign(static_cast<std::size_t>(n), opts.lambda);

  Eigen::VectorXd x0(3 * n);
  Vec3 prev = start;
  Points init;
  for (int i = 0; i < n; ++i) {
    prev = detail::initial_waypoint(*scps[static_cast<std::size_t>(i)], prev, opts);
    x0.segment<3>(3 * i) = prev;
    init.push_back(prev);
  }
  ws.initial_length = smooth_route_length(init, start, goal, opts.epsilon);

  Eigen::VectorXd x = x0;
  for (int restart = 0;; ++restart) {
    const Objective f = waypoint_objective(scps, start, goal, ws.penalty_weights, opts);
    const SolveResult res = minimize(f, x, opts.solver);
    x = res.argmin;
    ws.status = res.status;
    ws.restarts = restart;
    ws.waypoints.clear();
    for (int i = 0; i < n; ++i) ws.waypoints.push_back(res.argmin.segment<3>(3 * i));

    std::vector<int> bad;
    for (int i = 0; i < n; ++i)
      if (!detail::waypoint_feasible(*scps[static_cast<std::size_t>(i)], ws.waypoints[i], opts,
                                     opts.feasibility_tol))
        bad.push_back(i);
    if (bad.empty()) break;
    if (restart >= opts.max_restarts)
      throw Error(ErrorKind::infeasible_route,
                  "waypoint for route position " + std::to_string(bad.front()) +
                      " stays outside its SCP after " + std::to_string(restart) + " restarts");
    for (int i : bad) ws.penalty_weights[static_cast<std::size_t>(i)] *= 2.0;
  }
  ws.final_length = smooth_route_length(ws.waypoints, start, goal, opts.epsilon);
  return ws;
}

}  // namespace scpvis
