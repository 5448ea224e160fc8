// Plans a small benchmark scene in memory and prints the scored result.
#include "scpvis/planner.hpp"

#include <cstdio>
#include <cstdlib>

int main(int argc, char** argv) {
  using namespace scpvis;
  const std::uint64_t seed = argc > 1 ? std::strtoull(argv[1], nullptr, 10) : 1;
  const Scene scene = generate_scene(scene_preset("small", seed));

  PlannerConfig cfg;  // paper defaults: R = 6, r = 20, alpha = 100, rho = 150
  try {
    const PlanResult r = plan_inspection(scene.points, scene.task, cfg);
    std::printf("visiting order:");
    for (int s : r.tour.order) std::printf(" %d", s);
    std::printf("\nvisibility %.2f  duration %.2f s  jerk %.1f  pieces %zu  %.0f ms\n",
                r.report.vis_capability, r.report.traj_duration, r.report.jerk_integral,
                r.trajopt.trajectory.piece_count(), r.report.total_ms);
    for (const auto& [stage, ms] : r.report.timings_ms) std::printf("  %-9s %8.1f ms\n", stage.c_str(), ms);
    return r.report.vis_capability == 1.0 ? 0 : 1;
  } catch (const Error& e) {
    std::fprintf(stderr, "%s: %s\n", std::string(to_string(e.kind())).c_str(), e.what());
    return 1;
  }
}
