// Acceptance run over the benchmark scenes. Prints one PASS/FAIL line per
// criterion and exits non-zero when any criterion fails.
#include "scpvis/planner.hpp"
#include "test_support.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <random>
#include <string>
#include <vector>

using namespace scpvis;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double rel_error(const Eigen::VectorXd& g, const Eigen::VectorXd& fd) {
  return (g - fd).norm() / std::max(fd.norm(), 1e-12);
}

// ---------------------------------------------------------------------------
// Checks applied to every accepted planning run

struct RunChecks {
  int runs = 0;
  // waypoints
  int waypoints = 0, waypoint_bad = 0;
  double worst_waypoint_lse = std::numeric_limits<double>::infinity();
  // corridor
  long polytopes = 0, interior_points = 0;
  int junctions = 0, junction_bad = 0;
  // trajectory
  double worst_speed_ratio = 0.0, worst_acc_ratio = 0.0, worst_c2 = 0.0;
  int dwell_elements = 0, dwell_bad = 0;
  double tightest_dwell_slack = std::numeric_limits<double>::infinity();
  int jerk_not_finite = 0;
  // membership oracle
  std::vector<double> agreement;   // per scene
  std::vector<double> soundness;   // per scene: SCP-visible samples with a clear sight line
};

void check_waypoints(const PlanResult& r, const PlannerConfig& cfg, RunChecks& c) {
  for (std::size_t i = 0; i < r.scps.size(); ++i) {
    const Vec3& w = r.waypoints.waypoints[i];
    const double lse = lse_distance(r.scps[i], w, cfg.alpha);
    const double ball = (w - r.scps[i].center).norm() - (cfg.bound_radius - cfg.d_min);
    c.worst_waypoint_lse = std::min(c.worst_waypoint_lse, lse);
    ++c.waypoints;
    if (!(lse >= cfg.d_min - 1e-3) || ball > 1e-3 || !point_in_scp(r.scps[i], w)) ++c.waypoint_bad;
  }
}

void check_corridor(const PlanResult& r, const PointCloudMap& inflated, const PlannerConfig& cfg,
                    RunChecks& c) {
  const auto scps = r.scp_ptrs();
  for (const auto& e : r.corridor.elements) {
    if (e.type != ElementType::poly) continue;
    ++c.polytopes;
    Vec3 mid = Vec3::Zero();
    for (const auto& v : e.poly.vertices) mid += v;
    mid /= static_cast<double>(e.poly.vertices.size());
    double reach = 0.0;
    for (const auto& v : e.poly.vertices) reach = std::max(reach, (v - mid).norm());
    // every point that can lie inside is within the vertex hull's bounding sphere
    for (const auto& p : range_query(inflated, mid, reach + 1e-6))
      if ((e.poly.normals * p - e.poly.offsets).maxCoeff() < 0.0) ++c.interior_points;
  }
  CorridorOptions o;
  o.d_min = cfg.d_min;
  o.alpha = cfg.alpha;
  for (std::size_t j = 0; j < r.corridor.junctions.size(); ++j) {
    const Vec3& x = r.corridor.junctions[j];
    ++c.junctions;
    bool ok = true;
    for (std::size_t k : {j, j + 1}) {
      const auto& e = r.corridor.elements[k];
      ok = ok && element_contains(e, scps, x, o);
      if (e.type == ElementType::scp) ok = ok && point_in_scp(*scps[static_cast<std::size_t>(e.route_index)], x);
    }
    if (!ok) ++c.junction_bad;
  }
}

void check_trajectory(const PlanResult& r, const PlannerConfig& cfg, RunChecks& c) {
  const SplineTrajectory& t = r.trajopt.trajectory;
  for (const auto& s : sample_trajectory(t, 0.01)) {
    c.worst_speed_ratio = std::max(c.worst_speed_ratio, s.v.norm() / cfg.v_max);
    c.worst_acc_ratio = std::max(c.worst_acc_ratio, s.a.norm() / cfg.a_max);
  }
  for (std::size_t i = 0; i + 1 < t.piece_count(); ++i)
    for (int k = 0; k <= 2; ++k)
      c.worst_c2 = std::max(c.worst_c2, (evaluate_piece(t, i, t.durations[i], k) -
                                         evaluate_piece(t, i + 1, 0.0, k)).cwiseAbs().maxCoeff());
  for (std::size_t e = 0; e < r.corridor.elements.size(); ++e) {
    const auto& el = r.corridor.elements[e];
    if (el.type != ElementType::scp) continue;
    double time = 0.0;
    for (std::size_t i = 0; i < t.piece_count(); ++i)
      if (t.piece_to_element[i] == static_cast<int>(e)) time += t.durations[i];
    ++c.dwell_elements;
    c.tightest_dwell_slack = std::min(c.tightest_dwell_slack, time - el.dwell);
    if (!(time > el.dwell)) ++c.dwell_bad;
  }
  if (!std::isfinite(r.report.jerk_integral)) ++c.jerk_not_finite;
}

/// Membership is unchanged by +-band moves along the axes and the ray.
bool away_from_boundary(const StarPolytope& scp, const Vec3& x, double band) {
  const bool in = point_in_scp(scp, x);
  const Vec3 radial = (x - scp.center).normalized();
  for (const Vec3& dir : {Vec3(Vec3::UnitX()), Vec3(Vec3::UnitY()), Vec3(Vec3::UnitZ()), radial})
    if (point_in_scp(scp, x + band * dir) != in || point_in_scp(scp, x - band * dir) != in)
      return false;
  return true;
}

void check_membership(const PlanResult& r, const PointCloudMap& inflated, const PlannerConfig& cfg,
                      double clearance, std::uint64_t seed, RunChecks& c) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, r.scps.size() - 1);
  int total = 0, agree = 0, visible = 0, visible_clear = 0;
  while (total < 10000) {
    const StarPolytope& scp = r.scps[pick(rng)];
    const Vec3 x = test::uniform_in_ball(rng, scp.center, cfg.bound_radius);
    if (!away_from_boundary(scp, x, 0.05)) continue;
    const bool in = point_in_scp(scp, x);
    const bool clear = (x - scp.center).norm() < cfg.bound_radius &&
                       segment_clear(inflated, scp.center, x, clearance);
    agree += in == clear;
    visible += in;
    visible_clear += in && clear;
    ++total;
  }
  c.agreement.push_back(static_cast<double>(agree) / total);
  c.soundness.push_back(visible ? static_cast<double>(visible_clear) / visible : 1.0);
}

struct Bench {
  RunChecks checks;
  int small_ok = 0, medium_ok = 0;
  std::vector<std::string> failures;
  std::vector<PlanResult> small_runs;  // kept for the cost gradient and time weight checks
  std::vector<Scene> small_scenes;
};

void plan_and_check(const std::string& scale, std::uint64_t seed, const PlannerConfig& cfg,
                    Bench& b, PlanResult* keep, double* total_ms = nullptr) {
  const Scene sc = generate_scene(scene_preset(scale, seed));
  const bool small = scale == "small";
  const bool counted = scale != "large";  // the large run only feeds the per-run checks
  try {
    PlanResult r = plan_inspection(sc.points, sc.task, cfg);
    const bool full = r.report.vis_capability == 1.0;
    if (full && small) ++b.small_ok;
    if (full && scale == "medium") ++b.medium_ok;
    if (!full && counted) b.failures.push_back(fmt("%s %d vis %.3f", scale.c_str(), static_cast<int>(seed), r.report.vis_capability));
    const PointCloudMap inflated(sc.points, cfg.inflation_offset);
    ++b.checks.runs;
    check_waypoints(r, cfg, b.checks);
    check_corridor(r, inflated, cfg, b.checks);
    check_trajectory(r, cfg, b.checks);
    check_membership(r, inflated, cfg, 0.75 * scene_preset(scale, seed).surface_spacing, 1000 + seed, b.checks);
    std::printf("  %-6s seed %2d  vis %.2f  duration %6.2f s  jerk %7.1f  %7.0f ms\n", scale.c_str(),
                static_cast<int>(seed), r.report.vis_capability, r.report.traj_duration,
                r.report.jerk_integral, r.report.total_ms);
    std::fflush(stdout);
    if (total_ms) *total_ms = r.report.total_ms;
    if (keep) *keep = std::move(r);
  } catch (const Error& e) {
    if (counted) b.failures.push_back(fmt("%s %d %s: %s", scale.c_str(), static_cast<int>(seed),
                             std::string(to_string(e.kind())).c_str(), e.what()));
    std::printf("  %-6s seed %2d  FAILED %s\n", scale.c_str(), static_cast<int>(seed), e.what());
    std::fflush(stdout);
    if (total_ms) *total_ms = std::numeric_limits<double>::infinity();
  }
}

// ---------------------------------------------------------------------------
// Randomised SCP pool for the approximation and gradient criteria

std::vector<StarPolytope> scp_pool(int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<StarPolytope> pool;
  for (int i = 0; i < count; ++i) {
    const PointCloudMap map(test::clutter_around_origin(rng, 2 + i % 7, 0.15), 0.0);
    const Vec3 c = test::uniform_in_box(rng, Vec3::Constant(-0.3), Vec3::Constant(0.3));
    pool.push_back(build_scp(map, c, 6.0, 20.0, 256));
  }
  return pool;
}

/// Hand-built SCP with one or two faces.
StarPolytope few_faces(std::mt19937_64& rng, int k) {
  StarPolytope s;
  s.center = test::uniform_in_box(rng, Vec3::Constant(-5), Vec3::Constant(5));
  s.transform = FlipTransform{s.center, 20.0, 6.0};
  s.normals.resize(k, 3);
  s.offsets.resize(k);
  std::uniform_real_distribution<double> off(14.0, 40.0);
  for (int i = 0; i < k; ++i) {
    s.normals.row(i) = test::random_unit(rng).transpose();
    s.offsets[i] = off(rng);
  }
  return s;
}

Verdict criterion_lse(const std::vector<StarPolytope>& pool) {
  std::mt19937_64 rng(2);
  const double alpha = 100.0;
  int n = 0, bad = 0, small_k = 0;
  double worst_ratio = 0.0;
  for (int i = 0; i < 1000; ++i) {
    StarPolytope own;
    const StarPolytope* scp;
    if (i % 5 == 4) {
      own = few_faces(rng, 1 + (i / 5) % 2);
      scp = &own;
    } else {
      scp = &pool[static_cast<std::size_t>(i) % pool.size()];
    }
    const Vec3 x = test::uniform_in_ball(rng, scp->center, 6.0);
    const auto k = scp->normals.rows();
    const double gap = lse_distance(*scp, x, alpha) - face_distances(*scp, x).maxCoeff();
    const double cap = std::log(static_cast<double>(k)) / alpha;
    bool ok = gap >= 0.0 && gap <= cap;
    if (static_cast<double>(k) <= std::exp(1.0)) {
      ++small_k;
      ok = ok && gap <= 0.01;
    }
    if (cap > 0.0) worst_ratio = std::max(worst_ratio, gap / cap);
    bad += ok ? 0 : 1;
    ++n;
  }
  return {bad == 0, fmt("%d/%d instances inside [0, ln K / alpha] (%d with K <= e also <= 0.01); largest gap %.3f of the bound",
                        n - bad, n, small_k, worst_ratio)};
}

Verdict criterion_gradients(const std::vector<StarPolytope>& pool, const Bench& b) {
  std::mt19937_64 rng(3);
  // visibility violation
  int vis_n = 0;
  double vis_worst = 0.0;
  while (vis_n < 100) {
    const StarPolytope& scp = pool[static_cast<std::size_t>(vis_n) % pool.size()];
    const Vec3 x = test::uniform_in_ball(rng, scp.center, 6.5);
    const double d_min = 0.1 + 2.0 * (vis_n % 3);
    const Violation v = visibility_violation(scp, x, d_min, 100.0, 1e4);
    if (v.value == 0.0 || std::abs(v.lse_hat) < 1e-4 || std::abs(v.ball_excess) < 1e-4) continue;
    Eigen::VectorXd fd(3), g = v.gradient;
    for (int k = 0; k < 3; ++k) {
      const double h = 1e-5;
      Vec3 p = x, m = x;
      p[k] += h;
      m[k] -= h;
      fd[k] = (visibility_violation(scp, p, d_min, 100.0, 1e4).value -
               visibility_violation(scp, m, d_min, 100.0, 1e4).value) / (2 * h);
    }
    vis_worst = std::max(vis_worst, rel_error(g, fd));
    ++vis_n;
  }
  // waypoint objective
  int jw_n = 0;
  double jw_worst = 0.0;
  RefineOptions opts;
  opts.d_min = 1.0;
  while (jw_n < 100) {
    const std::size_t a = static_cast<std::size_t>(jw_n) % pool.size(), c = (a + 1) % pool.size();
    StarPolytope second = pool[c];
    // move the second SCP away so the two balls only partly overlap
    const Vec3 shift(4.0, 1.0, 0.5);
    second.center += shift;
    second.transform.center += shift;
    second.scp_vertices.clear();
    const std::vector<const StarPolytope*> ptrs{&pool[a], &second};
    const Objective f = waypoint_objective(ptrs, Vec3(-7, 0, 0), Vec3(11, 2, 0), {1e4, 3e4}, opts);
    Eigen::VectorXd x(6);
    x.head<3>() = test::uniform_in_ball(rng, pool[a].center, 6.5);
    x.tail<3>() = test::uniform_in_ball(rng, second.center, 6.5);
    bool near_kink = false;
    for (int i = 0; i < 2; ++i) {
      const Violation v = visibility_violation(*ptrs[static_cast<std::size_t>(i)], x.segment<3>(3 * i), opts.d_min, opts.alpha, 1.0);
      near_kink |= std::abs(v.lse_hat) < 1e-3 || std::abs(v.ball_excess) < 1e-3;
    }
    if (near_kink) continue;
    Eigen::VectorXd g(6), tmp(6), fd(6);
    f(x, g);
    for (int k = 0; k < 6; ++k) {
      const double h = 1e-6;
      Eigen::VectorXd p = x, m = x;
      p[k] += h;
      m[k] -= h;
      fd[k] = (f(p, tmp) - f(m, tmp)) / (2 * h);
    }
    jw_worst = std::max(jw_worst, rel_error(g, fd));
    ++jw_n;
  }
  // full trajectory cost on the planned small scenes
  int tc_n = 0;
  double tc_worst = 0.0;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const PlannerConfig defaults;
  for (std::size_t s = 0; s < b.small_runs.size() && tc_n < 20; ++s) {
    const PlanResult& r = b.small_runs[s];
    if (r.trajopt.trajectory.piece_count() == 0) continue;
    const TrajOptConfig cfg = defaults.trajopt();
    Boundary bc;
    bc.start.p = b.small_scenes[s].task.start;
    bc.goal.p = b.small_scenes[s].task.goal;
    TrajectoryCost cost(r.corridor, r.scp_ptrs(), plan_pieces(r.corridor, r.waypoints, cfg), bc, cfg);
    Eigen::VectorXd x = cost.initial_point();
    for (Eigen::Index k = 0; k < x.size(); ++k) x[k] += 0.3 * u(rng);
    Eigen::VectorXd g, gp, gm, fd(x.size());
    cost(x, g);
    for (Eigen::Index k = 0; k < x.size(); ++k) {
      const double h = 1e-6 * std::max(1.0, std::abs(x[k]));
      Eigen::VectorXd xp = x, xm = x;
      xp[k] += h;
      xm[k] -= h;
      fd[k] = (cost(xp, gp) - cost(xm, gm)) / (2 * h);
    }
    tc_worst = std::max(tc_worst, rel_error(g, fd));
    ++tc_n;
  }
  const bool pass = vis_n >= 100 && jw_n >= 100 && tc_n >= 20 && vis_worst <= 1e-4 &&
                    jw_worst <= 1e-4 && tc_worst <= 1e-3;
  return {pass, fmt("worst relative error: visibility %.2e over %d, waypoint objective %.2e over %d, trajectory cost %.2e over %d",
                    vis_worst, vis_n, jw_worst, jw_n, tc_worst, tc_n)};
}

Verdict criterion_flip(const RunChecks& c) {
  std::mt19937_64 rng(4);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const FlipTransform t{test::uniform_in_box(rng, Vec3::Constant(-50), Vec3::Constant(50)), 20.0, 6.0};
    const Vec3 dir = test::random_unit(rng);
    const double d = std::uniform_real_distribution<double>(1e-3, 39.999)(rng);
    const Vec3 y = d * dir;
    const Vec3 twice = t.flip(t.center + t.flip(t.center + y));
    worst = std::max(worst, std::abs(twice.norm() - d));
  }
  const auto [lo, hi] = std::minmax_element(c.agreement.begin(), c.agreement.end());
  const int scenes = static_cast<int>(c.agreement.size());
  const int passing = static_cast<int>(std::count_if(c.agreement.begin(), c.agreement.end(),
                                                     [](double a) { return a >= 0.99; }));
  const double sound = *std::min_element(c.soundness.begin(), c.soundness.end());
  return {worst <= 1e-9 && passing == scenes,
          fmt("double flip error %.1e over 1e4 samples; oracle agreement %.2f%%..%.2f%% per scene, %d/%d scenes >= 99%%; SCP-visible samples with a clear sight line >= %.2f%%",
              worst, 100 * *lo, 100 * *hi, passing, scenes, 100 * sound)};
}

Verdict criterion_route(const RunChecks& c) {
  int instances = 0, mismatch = 0;
  for (int n = 1; n <= 8; ++n)
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      std::mt19937_64 rng(seed * 31 + static_cast<std::uint64_t>(n));
      Points spots;
      for (int i = 0; i < n; ++i) spots.push_back(test::uniform_in_box(rng, Vec3(0, 0, 1), Vec3(20, 20, 3)));
      const Vec3 s(1.5, 1.5, 1.5), g(18.5, 18.5, 1.5);
      const Tour tour = solve_atsp(spots, s, g);
      const Eigen::MatrixXd cost = route_cost_matrix(spots, s, g);
      std::vector<int> order(static_cast<std::size_t>(n));
      std::iota(order.begin(), order.end(), 0);
      double best = std::numeric_limits<double>::infinity();
      do best = std::min(best, tour_cost(cost, order));
      while (std::next_permutation(order.begin(), order.end()));
      ++instances;
      if (std::abs(tour.cost - best) > 1e-9 * best) ++mismatch;
    }
  return {mismatch == 0 && c.waypoint_bad == 0,
          fmt("visiting order optimal on %d/%d instances (N = 1..8, 50 seeds); %d/%d waypoints feasible, smallest LSE %.4f m",
              instances - mismatch, instances, c.waypoints - c.waypoint_bad, c.waypoints, c.worst_waypoint_lse)};
}

}  // namespace

int main() {
  PlannerConfig cfg;
  Bench b;
  std::vector<Verdict> verdicts(9);

  std::printf("benchmark runs\n");
  b.small_runs.resize(20);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    b.small_scenes.push_back(generate_scene(scene_preset("small", seed)));
    plan_and_check("small", seed, cfg, b, &b.small_runs[seed]);
  }
  for (std::uint64_t seed = 0; seed < 10; ++seed) plan_and_check("medium", seed, cfg, b, nullptr);
  double large_ms = 0.0;
  PlanResult large;
  plan_and_check("large", 0, cfg, b, &large, &large_ms);

  verdicts[1] = {b.small_ok == 20 && b.medium_ok == 10,
                 fmt("fully observed on small %d/20 and medium %d/10 scenes", b.small_ok, b.medium_ok)};
  for (const auto& f : b.failures) verdicts[1].detail += "; " + f;

  const auto pool = scp_pool(100, 1);
  verdicts[2] = criterion_lse(pool);
  verdicts[3] = criterion_gradients(pool, b);
  verdicts[4] = criterion_flip(b.checks);
  verdicts[5] = criterion_route(b.checks);

  const RunChecks& c = b.checks;
  verdicts[6] = {c.interior_points == 0 && c.junction_bad == 0 && c.polytopes > 0,
                 fmt("%ld map points strictly inside %ld polytopes over %d runs; %d/%d junctions inside both neighbours",
                     c.interior_points, c.polytopes, c.runs, c.junctions - c.junction_bad, c.junctions)};
  verdicts[7] = {c.worst_speed_ratio <= 1.01 && c.worst_acc_ratio <= 1.01 && c.worst_c2 <= 1e-9 &&
                     c.dwell_bad == 0,
                 fmt("peak speed %.4f v_max, peak acceleration %.4f a_max, joint mismatch %.1e, dwell held on %d/%d SCP elements (tightest margin %.3f s)",
                     c.worst_speed_ratio, c.worst_acc_ratio, c.worst_c2, c.dwell_elements - c.dwell_bad,
                     c.dwell_elements, c.tightest_dwell_slack)};

  // time weight: re-plan 10 small scenes with rho halved
  int monotone = 0, compared = 0;
  std::string rho_detail;
  PlannerConfig half = cfg;
  half.rho = 0.5 * cfg.rho;
  for (std::size_t s = 0; s < 10; ++s) {
    if (b.small_runs[s].trajopt.trajectory.piece_count() == 0) continue;
    try {
      const PlanResult r = plan_inspection(b.small_scenes[s].points, b.small_scenes[s].task, half);
      const double before = b.small_runs[s].report.traj_duration, after = r.report.traj_duration;
      ++compared;
      monotone += after >= before;
      rho_detail += fmt(" %.2f->%.2f", before, after);
    } catch (const Error& e) {
      rho_detail += fmt(" seed %d failed (%s)", static_cast<int>(s), e.what());
    }
  }
  std::string timing;
  for (const auto& [stage, ms] : large.report.timings_ms) timing += fmt(" %s %.0f", stage.c_str(), ms);
  verdicts[8] = {large_ms <= 30000.0 && c.jerk_not_finite == 0 && compared == 10 && monotone == 10,
                 fmt("large scene (80 x 80 m, 20 spots) in %.1f s [ms:%s]; jerk finite on %d/%d runs; halving rho kept or lengthened the duration on %d/%d scenes (s:%s)",
                     large_ms / 1000.0, timing.c_str(), c.runs - c.jerk_not_finite, c.runs, monotone,
                     compared, rho_detail.c_str())};

  const char* names[] = {"", "visibility guarantee", "LSE approximation", "gradient fidelity",
                         "flip involution and membership oracle", "route optimality",
                         "corridor safety", "trajectory feasibility", "runtime and smoothness"};
  std::printf("\nacceptance\n");
  int failed = 0;
  for (int k = 1; k <= 8; ++k) {
    std::printf("criterion %d %s  %s: %s\n", k, verdicts[k].pass ? "PASS" : "FAIL", names[k],
                verdicts[k].detail.c_str());
    failed += verdicts[k].pass ? 0 : 1;
  }
  std::printf("%d/8 criteria pass\n", 8 - failed);
  return failed == 0 ? 0 : 1;
}
