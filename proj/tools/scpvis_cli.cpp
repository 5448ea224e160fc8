// scpvis gen | plan | eval
#include "scpvis/planner.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <map>

using namespace scpvis;

namespace {

constexpr int kOk = 0;
constexpr int kPlanFailed = 1;
constexpr int kUsage = 2;

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::parse:
    case ErrorKind::input:
    case ErrorKind::io:
    case ErrorKind::empty_map:
      return kUsage;
    default:
      return kPlanFailed;
  }
}

std::string dashed(std::string key) {
  for (auto& ch : key)
    if (ch == '_') ch = '-';
  return key;
}

void write_failure(const std::string& out_dir, const Error& e) {
  RunReport r;
  r.status = "failed";
  r.error_kind = std::string(to_string(e.kind()));
  r.error_message = e.what();
  try {
    std::filesystem::create_directories(out_dir);
    detail::write_json(out_dir + "/report.json", report_to_json(r));
  } catch (const std::exception& w) {
    std::cerr << "scpvis: could not write report: " << w.what() << '\n';
  }
}

struct GenArgs {
  std::string scale = "small";
  std::uint64_t seed = 0;
  std::string out;
};

int run_gen(const GenArgs& a) {
  const Scene sc = generate_scene(scene_preset(a.scale, a.seed));
  write_scene_bundle(a.out, sc);
  std::cout << "wrote " << a.out << ": " << sc.points.size() << " points, "
            << sc.task.spots.size() << " spots\n";
  return kOk;
}

struct PlanArgs {
  std::string scene;
  std::string out;
  std::string config;
  std::map<std::string, std::string> overrides;  // config key -> flag text
};

PlannerConfig resolve_config(const PlanArgs& a, const TaskSpec& task) {
  PlannerConfig cfg;
  cfg.v_max = task.v_max;
  cfg.a_max = task.a_max;
  if (!a.config.empty()) apply_config_json(detail::read_json(a.config), cfg);
  nlohmann::json flags = nlohmann::json::object();
  for (const auto& [key, text] : a.overrides) {
    if (text.empty()) continue;
    try {
      flags[key] = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception&) {
      throw Error(ErrorKind::parse, "--" + dashed(key) + " expects a number, got '" + text + "'");
    }
  }
  apply_config_json(flags, cfg);
  cfg.validate();
  return cfg;
}

int run_plan(const PlanArgs& a) {
  Scene sc;
  PlannerConfig cfg;
  try {
    sc = load_scene_bundle(a.scene);
    cfg = resolve_config(a, sc.task);
  } catch (const Error& e) {
    write_failure(a.out, e);
    std::cerr << "scpvis plan: " << to_string(e.kind()) << ": " << e.what() << '\n';
    return exit_code(e.kind());
  }
  PlanResult r;
  try {
    r = plan_inspection(sc.points, sc.task, cfg);
  } catch (const Error& e) {
    write_failure(a.out, e);
    std::cerr << "scpvis plan: " << to_string(e.kind()) << ": " << e.what() << '\n';
    return e.kind() == ErrorKind::input ? kUsage : kPlanFailed;
  }
  std::filesystem::create_directories(a.out);
  write_trajectory_csv(r.trajopt.trajectory, 0.01, a.out + "/trajectory.csv");
  detail::write_json(a.out + "/trajectory.json", trajectory_to_json(r.trajopt.trajectory));
  detail::write_json(a.out + "/corridor.json", corridor_to_json(r.corridor));
  for (std::size_t k = 0; k < r.scps.size(); ++k)
    export_scp_mesh(r.scps[k], a.out + "/scp_" + std::to_string(r.tour.order[k]) + ".obj");
  r.report.extra["config"] = config_to_json(cfg);
  detail::write_json(a.out + "/report.json", report_to_json(r.report));
  std::cout << "vis_capability " << r.report.vis_capability << ", duration "
            << r.report.traj_duration << " s, jerk " << r.report.jerk_integral << ", "
            << r.report.total_ms << " ms\n";
  return kOk;
}

struct EvalArgs {
  std::string scene;
  std::string trajectory;
  std::string out;
  double radius = 6.0;
  double clearance = 0.1;
};

int run_eval(const EvalArgs& a) {
  const Scene sc = load_scene_bundle(a.scene);
  const PointCloudMap raw(sc.points, 0.0);
  EvalOptions o;
  o.sensible_radius = a.radius;
  o.clearance = a.clearance;
  RunReport r;
  if (std::filesystem::path(a.trajectory).extension() == ".json")
    r = evaluate_run(trajectory_from_json(detail::read_json(a.trajectory)), sc.task, raw, o);
  else
    r = evaluate_samples(read_trajectory_csv(a.trajectory), sc.task, raw, o);
  const nlohmann::json j = report_to_json(r);
  if (a.out.empty())
    std::cout << j.dump(2) << '\n';
  else
    detail::write_json(a.out, j);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Visibility-guaranteed inspection planning on star-convex polytopes"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a benchmark scene bundle");
  g->add_option("--scale", gen.scale, "small, medium or large")
      ->check(CLI::IsMember({"small", "medium", "large"}));
  g->add_option("--seed", gen.seed, "Random seed");
  g->add_option("--out", gen.out, "Output directory")->required();

  PlanArgs plan;
  int threads = -1;
  auto* p = app.add_subcommand("plan", "Plan an inspection trajectory for a scene bundle");
  p->add_option("scene", plan.scene, "Scene directory")->required()->check(CLI::ExistingDirectory);
  p->add_option("--out", plan.out, "Output directory")->required();
  p->add_option("--config", plan.config, "JSON file with PlannerConfig keys")->check(CLI::ExistingFile);
  p->add_option("--threads", threads, "Worker threads (default: available cores)");
  const nlohmann::json keys = config_to_json(PlannerConfig{});
  for (const auto& [key, value] : keys.items()) {
    if (key == "threads") continue;
    p->add_option("--" + dashed(key), plan.overrides[key], "Override " + key);
  }

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Score a trajectory against a scene bundle");
  e->add_option("scene", eval.scene, "Scene directory")->required()->check(CLI::ExistingDirectory);
  e->add_option("trajectory", eval.trajectory, "trajectory.json or trajectory.csv")
      ->required()
      ->check(CLI::ExistingFile);
  e->add_option("--out", eval.out, "Report path (default: stdout)");
  e->add_option("--radius", eval.radius, "Sensible radius R in metres");
  e->add_option("--clearance", eval.clearance, "Sight line clearance in metres");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err) == 0 ? kOk : kUsage;
  }
  if (threads >= 0) plan.overrides["threads"] = std::to_string(threads);

  try {
    if (*g) return run_gen(gen);
    if (*p) return run_plan(plan);
    return run_eval(eval);
  } catch (const Error& err) {
    std::cerr << "scpvis: " << to_string(err.kind()) << ": " << err.what() << '\n';
    return exit_code(err.kind());
  } catch (const std::exception& err) {
    std::cerr << "scpvis: " << err.what() << '\n';
    return kPlanFailed;
  }
}
