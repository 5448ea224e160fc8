#pragma once

#include "scpvis/corridor.hpp"
#include "scpvis/path_search.hpp"
#include "scpvis/pointcloud_map.hpp"
#include "scpvis/routing.hpp"
#include "scpvis/scenario.hpp"
#include "scpvis/star_convex.hpp"
#include "scpvis/trajectory_opt.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>

namespace scpvis {

struct PlannerConfig {
  double bound_radius = 6.0;  // R
  double flip_radius = 20.0;  // r
  double alpha = 100.0;
  double d_min = 0.1;
  double rho = 150.0;
  int eta = 10;
  double v_max = 4.0;
  double a_max = 6.0;
  double lambda_vis = 1e4;
  double lambda_safe = 1e4;
  double lambda_dyn = 1e4;
  double voxel_resolution = 0.0;  // 0: 0.25 m, or 0.5 m when the workspace exceeds 60 m
  int augment_count = 256;
  double inflation_offset = 0.3;
  double gen_radius = 3.0;
  double eval_clearance = 0.1;
  int max_iterations = 2000;
  int threads = 0;  // 0: hardware concurrency

  void validate() const {
    auto bad = [](const std::string& what) { throw Error(ErrorKind::input, what); };
    if (!(bound_radius > 0 && flip_radius > bound_radius)) bad("need flip_radius > bound_radius > 0");
    if (!(alpha > 0 && d_min > 0 && rho > 0)) bad("alpha, d_min and rho must be positive");
    if (!(v_max > 0 && a_max > 0)) bad("v_max and a_max must be positive");
    if (eta < 4) bad("eta must be at least 4");
    if (!(lambda_vis > 0 && lambda_safe > 0 && lambda_dyn > 0)) bad("penalty weights must be positive");
    if (voxel_resolution < 0) bad("voxel_resolution must be non-negative");
    if (augment_count < 32) bad("augment_count must be at least 32");
    if (inflation_offset < 0) bad("inflation_offset must be non-negative");
    if (!(gen_radius > 0)) bad("gen_radius must be positive");
    if (eval_clearance < 0) bad("eval_clearance must be non-negative");
    if (max_iterations < 1) bad("max_iterations must be positive");
    if (threads < 0) bad("threads must be non-negative");
  }

  TrajOptConfig trajopt() const {
    TrajOptConfig t;
    t.rho = rho;
    t.v_max = v_max;
    t.a_max = a_max;
    t.eta = eta;
    t.alpha = alpha;
    t.d_min = d_min;
    t.lambda_vis = lambda_vis;
    t.lambda_safe = lambda_safe;
    t.lambda_dyn = lambda_dyn;
    t.max_iterations = max_iterations;
    t.sight_clearance = eval_clearance;
    return t;
  }
};

namespace detail {

template <class T>
void config_field(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorKind::parse, std::string("config key '") + key + "' has the wrong type");
  }
}

}  // namespace detail

inline nlohmann::json config_to_json(const PlannerConfig& c) {
  return {{"bound_radius", c.bound_radius},       {"flip_radius", c.flip_radius},
          {"alpha", c.alpha},                     {"d_min", c.d_min},
          {"rho", c.rho},                         {"eta", c.eta},
          {"v_max", c.v_max},                     {"a_max", c.a_max},
          {"lambda_vis", c.lambda_vis},           {"lambda_safe", c.lambda_safe},
          {"lambda_dyn", c.lambda_dyn},           {"voxel_resolution", c.voxel_resolution},
          {"augment_count", c.augment_count},     {"inflation_offset", c.inflation_offset},
          {"gen_radius", c.gen_radius},           {"eval_clearance", c.eval_clearance},
          {"max_iterations", c.max_iterations},   {"threads", c.threads}};
}

/// Overlays the keys present in `j` onto `c`. Unknown keys are rejected.
inline void apply_config_json(const nlohmann::json& j, PlannerConfig& c) {
  if (!j.is_object()) throw Error(ErrorKind::parse, "config must be a JSON object");
  const nlohmann::json known = config_to_json(c);
  for (const auto& [k, v] : j.items())
    if (!known.contains(k)) throw Error(ErrorKind::parse, "unknown config key '" + k + "'");
  detail::config_field(j, "bound_radius", c.bound_radius);
  detail::config_field(j, "flip_radius", c.flip_radius);
  detail::config_field(j, "alpha", c.alpha);
  detail::config_field(j, "d_min", c.d_min);
  detail::config_field(j, "rho", c.rho);
  detail::config_field(j, "eta", c.eta);
  detail::config_field(j, "v_max", c.v_max);
  detail::config_field(j, "a_max", c.a_max);
  detail::config_field(j, "lambda_vis", c.lambda_vis);
  detail::config_field(j, "lambda_safe", c.lambda_safe);
  detail::config_field(j, "lambda_dyn", c.lambda_dyn);
  detail::config_field(j, "voxel_resolution", c.voxel_resolution);
  detail::config_field(j, "augment_count", c.augment_count);
  detail::config_field(j, "inflation_offset", c.inflation_offset);
  detail::config_field(j, "gen_radius", c.gen_radius);
  detail::config_field(j, "eval_clearance", c.eval_clearance);
  detail::config_field(j, "max_iterations", c.max_iterations);
  detail::config_field(j, "threads", c.threads);
}

namespace detail {

/// Runs fn(0..n-1) on up to `threads` workers; the first exception is rethrown.
inline void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  const int workers = std::max(1, std::min(threads, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex m;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(m);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

class StageClock {
 public:
  StageClock() : start_(std::chrono::steady_clock::now()), mark_(start_) {}
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double ms = std::chrono::duration<double, std::milli>(now - mark_).count();
    mark_ = now;
    return ms;
  }
  double total() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_, mark_;
};

}  // namespace detail

struct PlanResult {
  std::vector<StarPolytope> scps;  // in tour order
  Tour tour;
  WaypointSet waypoints;
  std::vector<GridPath> paths;
  Corridor corridor;
  TrajOptResult trajopt;
  RunReport report;
  double voxel_resolution = 0.0;

  std::vector<const StarPolytope*> scp_ptrs() const {
    std::vector<const StarPolytope*> out;
    for (const auto& s : scps) out.push_back(&s);
    return out;
  }
};

inline double effective_resolution(const PlannerConfig& cfg, const Aabb& bounds) {
  if (cfg.voxel_resolution > 0) return cfg.voxel_resolution;
  const Vec3 e = bounds.extent();
  return std::max(e.x(), e.y()) > 60.0 ? 0.5 : 0.25;
}

/**
 * Full pipeline on raw obstacle points: SCPs on the inflated map, visiting
 * order, waypoint refinement, grid search per leg, corridor, trajectory
 * optimization and the independent evaluation on the raw map. Stage times
 * (ms) land in result.report.timings_ms. Any stage failure throws.
 *
 * Leg searches run on a grid dilated by one voxel; a leg that has no path
 * there is searched again on the plain grid.
 */
inline PlanResult plan_inspection(const Points& raw_points, const TaskSpec& task,
                                  const PlannerConfig& cfg) {
  cfg.validate();
  if (task.spots.size() != task.dwell.size())
    throw Error(ErrorKind::input, "task needs one dwell time per spot");
  const int threads = cfg.threads > 0 ? cfg.threads
                                      : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  detail::StageClock clock;
  PlanResult out;
  const PointCloudMap raw(raw_points, 0.0);
  const PointCloudMap map(raw_points, cfg.inflation_offset);
  const int n = static_cast<int>(task.spots.size());
  // the corner points of the inflation leave gaps next to sparse obstacles,
  // so the raw clearance is checked as well
  for (int i = 0; i < n; ++i) {
    const Vec3& c = task.spots[static_cast<std::size_t>(i)];
    if (!map.empty() && (nearest_distance(map, c) <= cfg.d_min ||
                         nearest_distance(raw, c) <= cfg.d_min + cfg.inflation_offset))
      throw Error(ErrorKind::seed_in_collision, "spot " + std::to_string(i) + " lies inside an inflated obstacle");
  }
  auto& timings = out.report.timings_ms;

  // visiting order first so the SCPs can be stored in tour order
  out.tour = solve_atsp(task.spots, task.start, task.goal);
  const double route_ms = clock.lap();
  out.scps.resize(static_cast<std::size_t>(n));
  detail::parallel_for(n, threads, [&](int k) {
    const int spot = out.tour.order[static_cast<std::size_t>(k)];
    out.scps[static_cast<std::size_t>(k)] =
        build_scp(map, task.spots[static_cast<std::size_t>(spot)], cfg.bound_radius,
                  cfg.flip_radius, cfg.augment_count);
  });
  timings["scp"] = clock.lap();
  const auto scps = out.scp_ptrs();

  if (n > 0) {
    RefineOptions ro;
    ro.d_min = cfg.d_min;
    ro.alpha = cfg.alpha;
    ro.lambda = cfg.lambda_vis;
    ro.bounds = task.bounds;
    out.waypoints = refine_waypoints(scps, task.start, task.goal, ro);
  } else {
    out.waypoints.start = task.start;
    out.waypoints.goal = task.goal;
  }
  timings["route"] = route_ms + clock.lap();

  Aabb bounds = task.bounds;
  if (bounds.empty()) {
    bounds = map.bounds();
    bounds.extend(task.start);
    bounds.extend(task.goal);
    for (const auto& s : task.spots) bounds.extend(s);
  }
  out.voxel_resolution = effective_resolution(cfg, bounds);
  // cell centres stay d_min inside the workspace
  Aabb grid_box = bounds;
  const double inset = cfg.d_min + 0.5 * out.voxel_resolution;
  for (int k = 0; k < 3; ++k)
    if (grid_box.max[k] - grid_box.min[k] > 2.0 * inset + out.voxel_resolution) {
      grid_box.min[k] += inset;
      grid_box.max[k] -= inset;
    }
  const VoxelGrid grid = build_voxel_grid(map, out.voxel_resolution, grid_box);
  const VoxelGrid dilated = dilate(grid, 1);
  // legs run between spot centres: refined waypoints may sit close to the map
  // where no clear approach exists, while each centre is well inside its SCP
  Points nodes{task.start};
  for (const auto* s : scps) nodes.push_back(s->center);
  nodes.push_back(task.goal);
  out.paths.resize(nodes.size() - 1);
  detail::parallel_for(static_cast<int>(out.paths.size()), threads, [&](int leg) {
    const Vec3& a = nodes[static_cast<std::size_t>(leg)];
    const Vec3& b = nodes[static_cast<std::size_t>(leg) + 1];
    GridPath p;
    try {
      try {
        p = find_path(dilated, a, b);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::unreachable) throw;
        p = find_path(grid, a, b);
      }
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::unreachable) throw;
      const std::string target =
          leg < n ? "spot " + std::to_string(out.tour.order[static_cast<std::size_t>(leg)])
                  : std::string("goal");
      throw Error(ErrorKind::unreachable, target + " is unreachable: " + e.what());
    }
    out.paths[static_cast<std::size_t>(leg)] = shortcut_path(map, p, cfg.d_min + 0.5 * out.voxel_resolution);
  });
  timings["search"] = clock.lap();

  CorridorOptions co;
  co.d_min = cfg.d_min;
  co.alpha = cfg.alpha;
  co.gen_radius = cfg.gen_radius;
  co.bounds = bounds;
  std::vector<int> spot_index;
  std::vector<double> dwell;
  for (int spot : out.tour.order) {
    spot_index.push_back(spot);
    dwell.push_back(task.dwell[static_cast<std::size_t>(spot)]);
  }
  out.corridor = build_corridor(map, scps, spot_index, dwell, out.waypoints, out.paths, co);
  timings["corridor"] = clock.lap();

  Boundary bc;
  bc.start.p = task.start;
  bc.goal.p = task.goal;
  out.trajopt = optimize_trajectory(out.corridor, scps, out.waypoints, bc, cfg.trajopt(), &raw);
  timings["trajopt"] = clock.lap();

  EvalOptions eo;
  eo.sensible_radius = cfg.bound_radius;
  eo.clearance = cfg.eval_clearance;
  RunReport scored = evaluate_run(out.trajopt.trajectory, task, raw, eo);
  scored.timings_ms = timings;
  scored.timings_ms["eval"] = clock.lap();
  scored.total_ms = clock.total();
  scored.extra = {{"tour", out.tour.order},
                  {"refine_restarts", out.waypoints.restarts},
                  {"corridor_elements", out.corridor.elements.size()},
                  {"pieces", out.trajopt.trajectory.piece_count()},
                  {"optimizer_iterations", out.trajopt.iterations},
                  {"escalations", out.trajopt.escalations},
                  {"voxel_resolution", out.voxel_resolution}};
  out.report = std::move(scored);
  return out;
}

}  // namespace scpvis
