#pragma once

#include "scpvis/error.hpp"
#include "scpvis/geometry.hpp"
#include "scpvis/pointcloud_map.hpp"
#include "scpvis/trajectory.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace scpvis {

struct SceneSpec {
  std::string scale = "custom";
  double extent_x = 20.0;
  double extent_y = 20.0;
  double ceiling = 6.0;  // workspace height
  int pillar_count = 15;
  int ring_count = 6;
  int spot_count = 3;
  std::uint64_t seed = 0;
  double pillar_radius_min = 0.3, pillar_radius_max = 0.8;
  double pillar_height_min = 3.0, pillar_height_max = 5.0;
  double ring_radius_min = 1.0, ring_radius_max = 2.0;
  double ring_tube = 0.2;
  double surface_spacing = 0.25;  // 16 points per square metre
  double spot_clearance = 1.2;
  double spot_separation = 2.0;
  double spot_z_min = 1.0, spot_z_max = 3.0;
  double dwell = 1.0;
  double v_max = 4.0;
  double a_max = 6.0;

  void validate() const {
    auto bad = [](const std::string& what) { throw Error(ErrorKind::input, what); };
    if (!(extent_x > 0 && extent_y > 0 && ceiling > 0)) bad("scene extent must be positive");
    if (pillar_count < 0 || ring_count < 0 || spot_count < 0) bad("counts must be non-negative");
    if (!(surface_spacing > 0)) bad("surface spacing must be positive");
    if (!(pillar_radius_min > 0 && pillar_radius_min <= pillar_radius_max)) bad("bad pillar radius range");
    if (!(pillar_height_min > 0 && pillar_height_min <= pillar_height_max)) bad("bad pillar height range");
    if (!(ring_tube > 0 && ring_radius_min > ring_tube && ring_radius_min <= ring_radius_max))
      bad("bad ring radius range");
    if (!(spot_z_min <= spot_z_max)) bad("bad spot height range");
    if (!(dwell >= 0 && v_max > 0 && a_max > 0)) bad("bad task limits");
  }
};

/// Presets for "small", "medium" and "large".
inline SceneSpec scene_preset(const std::string& scale, std::uint64_t seed) {
  SceneSpec s;
  s.scale = scale;
  s.seed = seed;
  if (scale == "small") {
    s.extent_x = s.extent_y = 20.0;
    s.pillar_count = 15;
    s.ring_count = 6;
    s.spot_count = 3;
  } else if (scale == "medium") {
    s.extent_x = s.extent_y = 40.0;
    s.pillar_count = 60;
    s.ring_count = 20;
    s.spot_count = 10;
  } else if (scale == "large") {
    s.extent_x = s.extent_y = 80.0;
    s.pillar_count = 150;
    s.ring_count = 60;
    s.spot_count = 20;
  } else {
    throw Error(ErrorKind::input, "unknown scale '" + scale + "' (small, medium, large)");
  }
  return s;
}

struct TaskSpec {
  Points spots;
  std::vector<double> dwell;
  Vec3 start = Vec3::Zero();
  Vec3 goal = Vec3::Zero();
  double v_max = 4.0;
  double a_max = 6.0;
  Aabb bounds;  // workspace
};

struct Scene {
  SceneSpec spec;
  Points points;  // raw obstacle surface samples
  TaskSpec task;
};

namespace detail {

inline Points pillar_points(const Vec3& base, double radius, double height, double s) {
  Points pts;
  const int around = std::max(8, static_cast<int>(std::ceil(2.0 * M_PI * radius / s)));
  const int levels = std::max(1, static_cast<int>(std::ceil(height / s)));
  for (int l = 0; l <= levels; ++l) {
    const double z = height * l / levels;
    for (int i = 0; i < around; ++i) {
      const double a = 2.0 * M_PI * i / around;
      pts.push_back(base + Vec3(radius * std::cos(a), radius * std::sin(a), z));
    }
  }
  // top cap
  for (double rr = 0.0; rr < radius - 0.5 * s; rr += s) {
    const int ring = rr == 0.0 ? 1 : std::max(6, static_cast<int>(std::ceil(2.0 * M_PI * rr / s)));
    for (int i = 0; i < ring; ++i) {
      const double a = 2.0 * M_PI * i / ring;
      pts.push_back(base + Vec3(rr * std::cos(a), rr * std::sin(a), height));
    }
  }
  return pts;
}

inline Points torus_points(const Vec3& center, const Vec3& axis, double major, double tube, double s) {
  const Vec3 n = axis.normalized();
  const Vec3 u = n.unitOrthogonal();
  const Vec3 v = n.cross(u);
  const int nt = std::max(12, static_cast<int>(std::ceil(2.0 * M_PI * (major + tube) / s)));
  const int np = std::max(8, static_cast<int>(std::ceil(2.0 * M_PI * tube / s)));
  Points pts;
  for (int i = 0; i < nt; ++i) {
    const double th = 2.0 * M_PI * i / nt;
    const Vec3 radial = std::cos(th) * u + std::sin(th) * v;
    for (int j = 0; j < np; ++j) {
      const double ph = 2.0 * M_PI * j / np;
      pts.push_back(center + (major + tube * std::cos(ph)) * radial + tube * std::sin(ph) * n);
    }
  }
  return pts;
}

}  // namespace detail

/**
 * Pillars stand on z = 0; rings float with random orientation. Obstacles keep
 * 2 m away from the start and goal corners. Spots are drawn uniformly at
 * least `spot_clearance` from every obstacle sample and `spot_separation`
 * from each other. Fully determined by the spec (seed included).
 */
inline Scene generate_scene(const SceneSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  Scene scene;
  scene.spec = spec;
  TaskSpec& task = scene.task;
  task.start = Vec3(1.5, 1.5, 1.5);
  task.goal = Vec3(spec.extent_x - 1.5, spec.extent_y - 1.5, 1.5);
  task.v_max = spec.v_max;
  task.a_max = spec.a_max;
  task.bounds = Aabb{Vec3::Zero(), Vec3(spec.extent_x, spec.extent_y, spec.ceiling)};
  const double keep_out = 2.0;
  auto clear_of_ends = [&](const Vec3& c, double reach) {
    return (c - task.start).norm() > reach + keep_out && (c - task.goal).norm() > reach + keep_out;
  };

  for (int i = 0; i < spec.pillar_count; ++i) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
      const double r = uniform(spec.pillar_radius_min, spec.pillar_radius_max);
      const double h = uniform(spec.pillar_height_min, spec.pillar_height_max);
      const Vec3 base(uniform(0.0, spec.extent_x), uniform(0.0, spec.extent_y), 0.0);
      // compare horizontally: pillars are tall
      const Vec3 mid(base.x(), base.y(), task.start.z());
      if (!clear_of_ends(mid, r)) continue;
      const Points p = detail::pillar_points(base, r, h, spec.surface_spacing);
      scene.points.insert(scene.points.end(), p.begin(), p.end());
      break;
    }
  }
  for (int i = 0; i < spec.ring_count; ++i) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
      const double major = uniform(spec.ring_radius_min, spec.ring_radius_max);
      const Vec3 c(uniform(0.0, spec.extent_x), uniform(0.0, spec.extent_y),
                   uniform(1.5, std::max(1.5, spec.ceiling - 2.0)));
      std::normal_distribution<double> g(0.0, 1.0);
      const Vec3 axis(g(rng), g(rng), g(rng));
      if (axis.norm() < 1e-9 || !clear_of_ends(c, major + spec.ring_tube)) continue;
      const Points p = detail::torus_points(c, axis, major, spec.ring_tube, spec.surface_spacing);
      scene.points.insert(scene.points.end(), p.begin(), p.end());
      break;
    }
  }

  const PointCloudMap map(scene.points, 0.0);
  const double margin = 1.0;
  long attempts = 0;
  while (static_cast<int>(task.spots.size()) < spec.spot_count) {
    if (++attempts > 200000)
      throw Error(ErrorKind::input, "could not place " + std::to_string(spec.spot_count) +
                                        " spots with the requested clearance");
    const Vec3 c(uniform(margin, spec.extent_x - margin), uniform(margin, spec.extent_y - margin),
                 uniform(spec.spot_z_min, spec.spot_z_max));
    if (!map.empty() && nearest_distance(map, c) < spec.spot_clearance) continue;
    bool ok = true;
    for (const auto& s : task.spots) ok = ok && (s - c).norm() >= spec.spot_separation;
    if (!ok) continue;
    task.spots.push_back(c);
    task.dwell.push_back(spec.dwell);
  }
  return scene;
}

// ---------------------------------------------------------------------------
// Bundle I/O

namespace detail {

inline nlohmann::json vec_json(const Vec3& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); }

inline Vec3 json_vec(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw Error(ErrorKind::parse, "expected [x, y, z]");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

inline void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path);
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorKind::io, "write failed for " + path);
}

inline nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, path + ": " + e.what());
  }
}

}  // namespace detail

inline nlohmann::json task_to_json(const TaskSpec& t) {
  using nlohmann::json;
  json spots = json::array();
  for (std::size_t i = 0; i < t.spots.size(); ++i)
    spots.push_back({{"position", detail::vec_json(t.spots[i])}, {"dwell", t.dwell[i]}});
  return {{"spots", spots},
          {"start", detail::vec_json(t.start)},
          {"goal", detail::vec_json(t.goal)},
          {"v_max", t.v_max},
          {"a_max", t.a_max},
          {"bounds", {{"min", detail::vec_json(t.bounds.min)}, {"max", detail::vec_json(t.bounds.max)}}}};
}

inline TaskSpec task_from_json(const nlohmann::json& j) {
  TaskSpec t;
  try {
    for (const auto& s : j.at("spots")) {
      t.spots.push_back(detail::json_vec(s.at("position")));
      const double d = s.value("dwell", 1.0);
      if (!(d >= 0.0)) throw Error(ErrorKind::parse, "dwell must be non-negative");
      t.dwell.push_back(d);
    }
    t.start = detail::json_vec(j.at("start"));
    t.goal = detail::json_vec(j.at("goal"));
    t.v_max = j.value("v_max", 4.0);
    t.a_max = j.value("a_max", 6.0);
    if (j.contains("bounds")) {
      t.bounds.min = detail::json_vec(j["bounds"].at("min"));
      t.bounds.max = detail::json_vec(j["bounds"].at("max"));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, std::string("task.json: ") + e.what());
  }
  if (!(t.v_max > 0 && t.a_max > 0)) throw Error(ErrorKind::parse, "task limits must be positive");
  return t;
}

inline nlohmann::json scene_spec_to_json(const SceneSpec& s) {
  return {{"scale", s.scale},
          {"seed", s.seed},
          {"extent", {s.extent_x, s.extent_y}},
          {"ceiling", s.ceiling},
          {"pillar_count", s.pillar_count},
          {"ring_count", s.ring_count},
          {"spot_count", s.spot_count},
          {"pillar_radius", {s.pillar_radius_min, s.pillar_radius_max}},
          {"pillar_height", {s.pillar_height_min, s.pillar_height_max}},
          {"ring_radius", {s.ring_radius_min, s.ring_radius_max}},
          {"ring_tube", s.ring_tube},
          {"surface_spacing", s.surface_spacing},
          {"spot_clearance", s.spot_clearance},
          {"spot_separation", s.spot_separation},
          {"dwell", s.dwell}};
}

/// Writes map.xyz, task.json and meta.json into `dir` (created if needed).
inline void write_scene_bundle(const std::string& dir, const Scene& scene) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::io, "cannot create " + dir + ": " + ec.message());
  write_xyz(dir + "/map.xyz", scene.points);
  detail::write_json(dir + "/task.json", task_to_json(scene.task));
  detail::write_json(dir + "/meta.json", scene_spec_to_json(scene.spec));
}

/// Reads a bundle; meta.json is optional.
inline Scene load_scene_bundle(const std::string& dir) {
  Scene s;
  s.points = read_points(dir + "/map.xyz");
  s.task = task_from_json(detail::read_json(dir + "/task.json"));
  if (s.task.bounds.empty()) {
    Aabb b = bounding_box(s.points);
    b.extend(s.task.start);
    b.extend(s.task.goal);
    for (const auto& p : s.task.spots) b.extend(p);
    s.task.bounds = b;
  }
  if (std::filesystem::exists(dir + "/meta.json")) {
    const auto m = detail::read_json(dir + "/meta.json");
    s.spec.scale = m.value("scale", std::string("custom"));
    s.spec.seed = m.value("seed", std::uint64_t{0});
  }
  return s;
}

// ---------------------------------------------------------------------------
// Scoring

struct EvalOptions {
  double sensible_radius = 6.0;
  double clearance = 0.1;
  double dt = 0.01;
};

struct RunReport {
  std::string status = "ok";
  std::string error_kind;
  std::string error_message;
  double vis_capability = 0.0;
  std::vector<bool> observed;
  std::vector<double> longest_view;  // seconds, per spot
  double traj_duration = 0.0;
  double jerk_integral = 0.0;
  double max_speed = 0.0;
  double max_acc = 0.0;
  std::map<std::string, double> timings_ms;
  double total_ms = 0.0;
  nlohmann::json extra = nlohmann::json::object();
};

/**
 * Visibility and peak dynamics from samples spaced `dt` apart. A spot counts
 * as observed when some run of consecutive samples, each within the sensible
 * radius and with a clear segment to the spot, covers at least its dwell
 * time; each sample stands for one dt slot. Only map-level queries are used.
 */
inline void score_samples(const std::vector<TrajectorySample>& samples, double dt,
                          const TaskSpec& task, const PointCloudMap& map, const EvalOptions& o,
                          RunReport& r) {
  if (task.spots.size() != task.dwell.size())
    throw Error(ErrorKind::input, "task needs one dwell time per spot");
  for (const auto& s : samples) {
    r.max_speed = std::max(r.max_speed, s.v.norm());
    r.max_acc = std::max(r.max_acc, s.a.norm());
  }
  int seen = 0;
  r.observed.clear();
  r.longest_view.clear();
  for (std::size_t i = 0; i < task.spots.size(); ++i) {
    const Vec3& c = task.spots[i];
    long run = 0, best = 0;
    for (const auto& s : samples) {
      const bool vis = (s.p - c).norm() <= o.sensible_radius &&
                       (map.empty() || segment_clear(map, s.p, c, o.clearance));
      run = vis ? run + 1 : 0;
      best = std::max(best, run);
    }
    const double view = static_cast<double>(best) * dt;
    r.longest_view.push_back(view);
    const bool ok = best > 0 && view >= task.dwell[i] - 1e-9;
    r.observed.push_back(ok);
    seen += ok ? 1 : 0;
  }
  r.vis_capability = task.spots.empty() ? 1.0 : static_cast<double>(seen) / task.spots.size();
}

/// Scores a trajectory against the raw map; the jerk integral is exact.
inline RunReport evaluate_run(const SplineTrajectory& traj, const TaskSpec& task,
                              const PointCloudMap& map, const EvalOptions& o = {}) {
  if (traj.piece_count() == 0) throw Error(ErrorKind::input, "empty trajectory");
  RunReport r;
  r.traj_duration = traj.total_time();
  r.jerk_integral = jerk_integral(traj);
  score_samples(sample_trajectory(traj, o.dt), o.dt, task, map, o, r);
  return r;
}

/**
 * Scores an already sampled trajectory. The sample step is the spacing of
 * the first two rows; only the final interval may be shorter. The jerk
 * integral is estimated from differenced accelerations.
 */
inline RunReport evaluate_samples(const std::vector<TrajectorySample>& samples,
                                  const TaskSpec& task, const PointCloudMap& map,
                                  const EvalOptions& o = {}) {
  if (samples.size() < 2) throw Error(ErrorKind::input, "need at least two samples");
  const double dt = samples[1].t - samples[0].t;
  for (std::size_t k = 1; k < samples.size(); ++k) {
    const double step = samples[k].t - samples[k - 1].t;
    const bool last = k + 1 == samples.size();
    if (step > dt * (1.0 + 1e-6) || (!last && step < dt * (1.0 - 1e-6)))
      throw Error(ErrorKind::input, "samples are not evenly spaced at row " + std::to_string(k + 1));
  }
  RunReport r;
  r.traj_duration = samples.back().t - samples.front().t;
  for (std::size_t k = 1; k < samples.size(); ++k) {
    const double h = samples[k].t - samples[k - 1].t;
    r.jerk_integral += ((samples[k].a - samples[k - 1].a) / h).squaredNorm() * h;
  }
  score_samples(samples, dt, task, map, o, r);
  r.extra["jerk_integral_estimated"] = true;
  return r;
}

inline nlohmann::json report_to_json(const RunReport& r) {
  using nlohmann::json;
  json j = {{"status", r.status},
            {"vis_capability", r.vis_capability},
            {"observed", r.observed},
            {"longest_view_s", r.longest_view},
            {"traj_duration_s", r.traj_duration},
            {"jerk_integral", r.jerk_integral},
            {"max_speed", r.max_speed},
            {"max_acc", r.max_acc},
            {"timings_ms", r.timings_ms},
            {"total_ms", r.total_ms}};
  if (!r.error_kind.empty()) j["error"] = {{"kind", r.error_kind}, {"message", r.error_message}};
  for (const auto& [k, v] : r.extra.items()) j[k] = v;
  return j;
}

}  // namespace scpvis
