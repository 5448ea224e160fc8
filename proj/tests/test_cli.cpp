#include "scpvis/scenario.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sys/wait.h>

using namespace scpvis;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(SCPVIS_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string dir(const std::string& name) {
  const fs::path p = fs::path(::testing::TempDir()) / ("cli_" + name);
  fs::remove_all(p);
  return p.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

nlohmann::json read(const std::string& path) { return nlohmann::json::parse(slurp(path)); }

/// Small scene planned once and shared by the tests below.
class CliPlan : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    scene_ = new std::string(dir("scene"));
    out_ = new std::string(dir("plan"));
    ASSERT_EQ(run("gen --scale small --seed 3 --out " + *scene_), 0);
    ASSERT_EQ(run("plan " + *scene_ + " --out " + *out_ + " --threads 2"), 0);
  }
  static void TearDownTestSuite() {
    delete scene_;
    delete out_;
  }
  static std::string* scene_;
  static std::string* out_;
};
std::string* CliPlan::scene_ = nullptr;
std::string* CliPlan::out_ = nullptr;

}  // namespace

TEST(CliGen, WritesBundleAndRejectsBadScale) {
  const std::string d = dir("gen");
  EXPECT_EQ(run("gen --scale large --seed 2 --out " + d), 0);
  const auto meta = read(d + "/meta.json");
  EXPECT_EQ(meta["pillar_count"], 150);
  EXPECT_EQ(meta["ring_count"], 60);
  EXPECT_EQ(meta["extent"][0], 80.0);
  EXPECT_EQ(read(d + "/task.json")["spots"].size(), 20u);
  EXPECT_EQ(run("gen --scale huge --out " + dir("bad")), 2);
  EXPECT_EQ(run("gen --scale small"), 2);
  EXPECT_EQ(run("frobnicate"), 2);
}

TEST_F(CliPlan, WritesEveryArtifact) {
  for (const char* f : {"trajectory.csv", "trajectory.json", "corridor.json", "report.json"})
    EXPECT_TRUE(fs::exists(*out_ + "/" + f)) << f;
  const auto task = read(*scene_ + "/task.json");
  for (std::size_t i = 0; i < task["spots"].size(); ++i)
    EXPECT_TRUE(fs::exists(*out_ + "/scp_" + std::to_string(i) + ".obj"));
  const auto report = read(*out_ + "/report.json");
  EXPECT_EQ(report["status"], "ok");
  EXPECT_EQ(report["vis_capability"], 1.0);
  for (const char* k : {"scp", "route", "search", "corridor", "trajopt"})
    EXPECT_TRUE(report["timings_ms"].contains(k)) << k;
  EXPECT_EQ(report["config"]["rho"], 150.0);
}

TEST_F(CliPlan, EvalAgreesWithPlan) {
  const auto planned = read(*out_ + "/report.json");
  for (const char* f : {"trajectory.json", "trajectory.csv"}) {
    const std::string rep = dir(std::string("eval_") + f + ".json");
    ASSERT_EQ(run("eval " + *scene_ + " " + *out_ + "/" + f + " --out " + rep), 0) << f;
    const auto scored = read(rep);
    EXPECT_EQ(scored["vis_capability"], planned["vis_capability"]) << f;
    EXPECT_EQ(scored["observed"], planned["observed"]) << f;
  }
}

TEST_F(CliPlan, SameInputsGiveIdenticalJson) {
  const std::string again = dir("plan_again");
  ASSERT_EQ(run("plan " + *scene_ + " --out " + again + " --threads 1"), 0);
  EXPECT_EQ(slurp(*out_ + "/trajectory.json"), slurp(again + "/trajectory.json"));
  EXPECT_EQ(slurp(*out_ + "/corridor.json"), slurp(again + "/corridor.json"));
}

TEST_F(CliPlan, TruncatedCsvIsAParseError) {
  const std::string text = slurp(*out_ + "/trajectory.csv");
  const std::string cut = dir("cut.csv");
  std::ofstream(cut, std::ios::binary) << text.substr(0, text.size() / 3);
  EXPECT_EQ(run("eval " + *scene_ + " " + cut), 2);
}

TEST_F(CliPlan, FlagsOverrideConfigFile) {
  const std::string cfg = dir("cfg.json");
  std::ofstream(cfg) << R"({"rho": 300, "max_iterations": 1500})";
  const std::string out = dir("plan_cfg");
  ASSERT_EQ(run("plan " + *scene_ + " --out " + out + " --config " + cfg + " --rho 75"), 0);
  const auto used = read(out + "/report.json")["config"];
  EXPECT_EQ(used["rho"], 75.0);
  EXPECT_EQ(used["max_iterations"], 1500);
  std::ofstream(cfg) << R"({"rho_typo": 1})";
  const std::string bad = dir("plan_bad");
  EXPECT_EQ(run("plan " + *scene_ + " --out " + bad + " --config " + cfg), 2);
  EXPECT_EQ(read(bad + "/report.json")["error"]["kind"], "parse");
}

TEST(CliEval, HoverSeesOnlyTheNearSpot) {
  const std::string d = dir("hover");
  Scene sc;
  for (int i = -20; i <= 20; ++i)
    for (int k = 0; k <= 40; ++k) sc.points.push_back(Vec3(3.0, 0.1 * i, 0.1 * k));  // wall at x = 3
  sc.task.spots = {Vec3(0, 0, 1), Vec3(5, 0, 1), Vec3(-20, 0, 1)};
  sc.task.dwell = {1.0, 1.0, 1.0};
  sc.task.start = Vec3(-1, 0, 1);
  sc.task.goal = Vec3(-1, 0, 1);
  sc.task.bounds = Aabb{Vec3(-25, -5, 0), Vec3(10, 5, 5)};
  write_scene_bundle(d, sc);
  Boundary bc;
  bc.start.p = Vec3(0.5, 0, 1);
  bc.goal.p = bc.start.p;
  const std::string traj = d + "/hover.json";
  std::ofstream(traj) << trajectory_to_json(construct_spline({}, {2.0}, bc)).dump();
  const std::string rep = d + "/report.json";
  ASSERT_EQ(run("eval " + d + " " + traj + " --out " + rep), 0);
  const auto r = read(rep);
  EXPECT_EQ(r["observed"], nlohmann::json::array({true, false, false}));
}

TEST(CliPlanFailure, SealedSpotReportsUnreachable) {
  const std::string d = dir("sealed");
  Scene sc;
  const Vec3 c(14, 14, 3);
  for (int i = 0; i <= 40; ++i)
    for (int j = 0; j <= 40; ++j) {
      const double u = -2.0 + 0.1 * i, v = -2.0 + 0.1 * j;
      for (double w : {-2.0, 2.0}) {
        sc.points.push_back(c + Vec3(w, u, v));
        sc.points.push_back(c + Vec3(u, w, v));
        sc.points.push_back(c + Vec3(u, v, w));
      }
    }
  sc.task.spots = {Vec3(4, 4, 2), c};
  sc.task.dwell = {1.0, 1.0};
  sc.task.start = Vec3(1.5, 1.5, 1.5);
  sc.task.goal = Vec3(18.5, 18.5, 1.5);
  sc.task.bounds = Aabb{Vec3(0, 0, 0), Vec3(20, 20, 6)};
  write_scene_bundle(d, sc);
  const std::string out = dir("sealed_out");
  EXPECT_EQ(run("plan " + d + " --out " + out), 1);
  const auto r = read(out + "/report.json");
  EXPECT_EQ(r["status"], "failed");
  EXPECT_EQ(r["error"]["kind"], "unreachable");
  EXPECT_NE(r["error"]["message"].get<std::string>().find("spot 1"), std::string::npos);
  EXPECT_FALSE(fs::exists(out + "/trajectory.json"));
}
