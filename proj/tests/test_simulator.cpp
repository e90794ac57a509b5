#include <catch2/catch_amalgamated.hpp>

#include "keto/simulator.hpp"
#include "keto/toolgen.hpp"

using namespace keto;

namespace {

PointCloud stick_cloud(double length, double width, std::uint64_t seed) {
  ToolSpec spec;
  ToolPart part;
  part.shape = PartShape::box;
  part.length = length;
  part.width = width;
  part.height = 0.02;
  spec.parts = {part};
  return render_cloud(spec, 1024, 0.0, seed);
}

// Builds the full stick-strike episode against a hammering scene: function
// point on the +x tip, effect direction out along +x.
struct GoldenEpisode {
  TaskScene scene;
  PointCloud cloud;
  GraspPose grasp;
  ManipAction action;
};

GoldenEpisode golden_hammering(std::uint64_t scene_seed, double drive) {
  GoldenEpisode ep;
  ep.scene = make_task(TaskKind::hammering, scene_seed);
  ep.cloud = stick_cloud(0.18, 0.02, 11);

  ToolKeypoints k;
  k.x_g = ep.cloud.points[nearest_point_xy(ep.cloud, {-0.045, 0.0})].xy();
  k.x_f = ep.cloud.points[nearest_point_xy(ep.cloud, {0.09, 0.0})].xy();
  k.x_e = k.x_f + Vec2{1.0, 0.0};

  auto candidates = sample_grasp_candidates(ep.cloud, 32, 5);
  REQUIRE_FALSE(candidates.empty());
  ep.grasp = select_grasp(candidates, k);

  auto qp = build_qp(k, ep.scene.env,
                     WorkspaceBox{ep.scene.env.target.x - 0.5,
                                  ep.scene.env.target.x + 0.5,
                                  ep.scene.env.target.y - 0.5,
                                  ep.scene.env.target.y + 0.5});
  auto sol = solve_qp(qp);
  PlanarPose observed{ep.grasp.position.x, ep.grasp.position.y,
                      std::atan2(k.x_f.y - k.x_g.y, k.x_f.x - k.x_g.x)};
  ep.action = recover_action(sol, k, observed, ep.scene.threshold);
  ep.action.drive = drive;
  return ep;
}

}  // namespace

TEST_CASE("make_task is deterministic", "[simulator]") {
  for (auto kind : {TaskKind::hammering, TaskKind::pushing, TaskKind::reaching}) {
    auto a = make_task(kind, 99);
    auto b = make_task(kind, 99);
    CHECK(a.env.target.x == b.env.target.x);
    CHECK(a.env.receiver.y == b.env.receiver.y);
    CHECK(a.tool_start.theta == b.tool_start.theta);
    REQUIRE(a.obstacles.size() == b.obstacles.size());
    REQUIRE(a.targets.size() == b.targets.size());
  }
}

TEST_CASE("pushing scenes place three collinear disks", "[simulator]") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto scene = make_task(TaskKind::pushing, seed);
    REQUIRE(scene.targets.size() == 3);
    Vec2 a = scene.targets[0].center;
    Vec2 b = scene.targets[1].center;
    Vec2 c = scene.targets[2].center;
    CHECK(std::abs((b - a).cross(c - a)) < 1e-9);
    CHECK((b - a).norm() == Catch::Approx(0.05).margin(1e-12));
  }
}

TEST_CASE("reaching scenes have the exact tunnel gap", "[simulator]") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto scene = make_task(TaskKind::reaching, seed);
    CHECK(scene.tunnel_gap == 0.04);
    REQUIRE(scene.obstacles.size() == 2);
    // Inner wall faces are tunnel_gap apart.
    Vec2 d = scene.obstacles[1].center - scene.obstacles[0].center;
    double separation = d.norm() - scene.obstacles[0].half_y -
                        scene.obstacles[1].half_y;
    CHECK(separation == Catch::Approx(0.04).margin(1e-12));
  }
}

TEST_CASE("grasp candidates on a thin rectangle cross its width",
          "[simulator]") {
  auto cloud = stick_cloud(0.15, 0.02, 3);
  auto candidates = sample_grasp_candidates(cloud, 32, 7);
  REQUIRE_FALSE(candidates.empty());
  for (const auto& g : candidates) {
    CHECK(g.width <= 0.035);  // across the 0.02 dimension, not the 0.15 one
    CHECK(g.quality > 0.0);
    CHECK(g.quality <= 1.0);
  }
  // Sorted by quality.
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    CHECK(candidates[i - 1].quality >= candidates[i].quality);
  }
}

TEST_CASE("an oversized disk yields no grasp candidates", "[simulator]") {
  ToolSpec spec;
  ToolPart part;
  part.shape = PartShape::disk;
  part.length = part.width = 0.12;
  part.height = 0.02;
  spec.parts = {part};
  auto cloud = render_cloud(spec, 1024, 0.0, 9);
  auto candidates = sample_grasp_candidates(cloud, 32, 7);
  CHECK(candidates.empty());
}

TEST_CASE("grasp sampling is deterministic", "[simulator]") {
  auto cloud = stick_cloud(0.16, 0.025, 21);
  auto a = sample_grasp_candidates(cloud, 16, 13);
  auto b = sample_grasp_candidates(cloud, 16, 13);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].position.x == b[i].position.x);
    CHECK(a[i].theta == b[i].theta);
    CHECK(a[i].quality == b[i].quality);
  }
}

TEST_CASE("golden stick strike hammers the nail in", "[simulator]") {
  auto ep = golden_hammering(4, 0.08);
  auto out = execute(ep.scene, ep.cloud, ep.grasp, ep.action);
  INFO(out.diagnostics);
  CHECK(out.grasp_ok);
  CHECK_FALSE(out.collision);
  CHECK(out.success);
  CHECK(out.displacement >= ep.scene.threshold);
}

TEST_CASE("missing the target gives zero displacement", "[simulator]") {
  auto ep = golden_hammering(4, 0.08);
  Vec2 perp = ep.scene.env.ehat_unit().perp();
  ep.action.x_T += perp * 0.2;
  auto out = execute(ep.scene, ep.cloud, ep.grasp, ep.action);
  CHECK_FALSE(out.success);
  CHECK(out.displacement == 0.0);
}

TEST_CASE("a thick tool cannot reach into the tunnel", "[simulator]") {
  auto scene = make_task(TaskKind::reaching, 12);
  auto cloud = stick_cloud(0.2, 0.05, 31);  // 0.05 > tunnel gap 0.04

  ToolKeypoints k;
  k.x_g = cloud.points[nearest_point_xy(cloud, {-0.05, 0.0})].xy();
  k.x_f = cloud.points[nearest_point_xy(cloud, {0.1, 0.0})].xy();
  k.x_e = k.x_f + Vec2{1.0, 0.0};
  auto candidates = sample_grasp_candidates(cloud, 32, 5);
  REQUIRE_FALSE(candidates.empty());
  auto grasp = select_grasp(candidates, k);
  auto sol = solve_qp(build_qp(k, scene.env,
                               WorkspaceBox{scene.env.target.x - 0.5,
                                            scene.env.target.x + 0.5,
                                            scene.env.target.y - 0.5,
                                            scene.env.target.y + 0.5}));
  PlanarPose observed{grasp.position.x, grasp.position.y,
                      std::atan2(k.x_f.y - k.x_g.y, k.x_f.x - k.x_g.x)};
  auto action = recover_action(sol, k, observed, scene.threshold);
  auto out = execute(scene, cloud, grasp, action);
  CHECK_FALSE(out.success);
  CHECK((out.collision || out.diagnostics == "thin-part-violation"));
}

TEST_CASE("execute is bit-deterministic", "[simulator]") {
  auto ep = golden_hammering(8, 0.06);
  auto a = execute(ep.scene, ep.cloud, ep.grasp, ep.action);
  for (int i = 0; i < 20; ++i) {
    auto b = execute(ep.scene, ep.cloud, ep.grasp, ep.action);
    CHECK(a.success == b.success);
    CHECK(a.grasp_ok == b.grasp_ok);
    CHECK(a.collision == b.collision);
    CHECK(a.displacement == b.displacement);
    CHECK(a.diagnostics == b.diagnostics);
  }
}

TEST_CASE("achieved displacement is monotone in drive distance",
          "[simulator]") {
  auto base = golden_hammering(15, 0.0);
  double prev = -1.0;
  for (double drive = 0.0; drive <= 0.2; drive += 0.01) {
    auto ep = base;
    ep.action.drive = drive;
    auto out = execute(ep.scene, ep.cloud, ep.grasp, ep.action);
    if (out.collision) break;
    CHECK(out.displacement >= prev - 1e-12);
    prev = out.displacement;
  }
}

TEST_CASE("no silhouette intersection means exactly zero displacement",
          "[simulator]") {
  auto scene = make_task(TaskKind::pushing, 3);
  auto cloud = stick_cloud(0.15, 0.02, 17);
  auto candidates = sample_grasp_candidates(cloud, 8, 2);
  REQUIRE_FALSE(candidates.empty());
  GraspPose grasp = candidates[0];
  ManipAction action;
  // Park the tool far from every target, oriented as observed.
  action.theta_obs = 0.0;
  action.theta_T = 0.0;
  action.x_T = scene.env.target + scene.env.ehat_unit().perp() * 1.5;
  action.drive = 0.1;
  auto out = execute(scene, cloud, grasp, action);
  CHECK(out.displacement == 0.0);
  CHECK_FALSE(out.success);
}

TEST_CASE("success implies grasp_ok and no collision", "[simulator]") {
  Rng rng(2222);
  int episodes = 0;
  for (std::uint64_t s = 0; s < 60; ++s) {
    TaskKind kind = static_cast<TaskKind>(s % 3);
    auto scene = make_task(kind, 1000 + s);
    auto spec = generate_tool(
        s % 2 ? ToolCategory::hammer : ToolCategory::non_hammer, 400 + s);
    auto cloud = render_cloud(spec, 512, 0.001, s);
    GraspPose grasp;
    grasp.position = {rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1)};
    grasp.theta = rng.uniform(-kPi, kPi);
    ManipAction action;
    action.x_T = {rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2)};
    action.theta_T = rng.uniform(-kPi, kPi);
    action.theta_obs = rng.uniform(-kPi, kPi);
    action.drive = rng.uniform(0.0, 0.2);
    auto out = execute(scene, cloud, grasp, action);
    if (out.success) {
      CHECK(out.grasp_ok);
      CHECK_FALSE(out.collision);
    }
    ++episodes;
  }
  CHECK(episodes == 60);
}

TEST_CASE("non-finite actions are rejected", "[simulator]") {
  auto scene = make_task(TaskKind::hammering, 1);
  auto cloud = stick_cloud(0.15, 0.02, 1);
  GraspPose grasp;
  grasp.position = {0.0, 0.0};
  ManipAction action;
  action.x_T = {std::numeric_limits<double>::quiet_NaN(), 0.0};
  REQUIRE_THROWS_MATCHES(execute(scene, cloud, grasp, action), Error,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("invalid-action")));
}
