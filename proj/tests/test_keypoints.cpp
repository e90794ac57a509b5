#include <catch2/catch_amalgamated.hpp>

#include "keto/keypoints.hpp"
#include "keto/toolgen.hpp"

using namespace keto;

namespace {

PointCloud t_hammer_cloud(std::uint64_t seed) {
  ToolSpec spec;
  ToolPart handle;
  handle.shape = PartShape::box;
  handle.length = 0.18;
  handle.width = 0.024;
  handle.height = 0.02;
  ToolPart head;
  head.shape = PartShape::box;
  head.length = 0.05;
  head.width = 0.02;
  head.height = 0.03;
  head.pose = PlanarPose::make(0.09, 0.0, kPi / 2.0);
  spec.parts = {handle, head};
  return render_cloud(spec, 1024, 0.0, seed);
}

PointCloud stick(std::uint64_t seed) {
  ToolSpec spec;
  ToolPart part;
  part.shape = PartShape::box;
  part.length = 0.2;
  part.width = 0.02;
  part.height = 0.02;
  spec.parts = {part};
  return render_cloud(spec, 512, 0.0, seed);
}

}  // namespace

TEST_CASE("validate_keypoints accepts generator output", "[keypoints]") {
  auto cloud = t_hammer_cloud(1);
  auto k = heuristic_keypoints(cloud, TaskKind::hammering, 5);
  CHECK(validate_keypoints(k, cloud));
}

TEST_CASE("validate_keypoints rejects off-cloud and degenerate keypoints",
          "[keypoints]") {
  auto cloud = stick(2);
  auto k = heuristic_keypoints(cloud, TaskKind::pushing, 3);
  REQUIRE(validate_keypoints(k, cloud));

  auto off = k;
  off.x_g += Vec2{0.05, 0.05};
  CHECK_FALSE(validate_keypoints(off, cloud));

  auto close = k;
  close.x_f = close.x_g + Vec2{0.01, 0.0};
  close.x_e = close.x_f + Vec2{0.0, 1.0};
  CHECK_FALSE(validate_keypoints(close, cloud));

  auto bade = k;
  bade.x_e = bade.x_f + Vec2{0.0, 0.5};
  CHECK_FALSE(validate_keypoints(bade, cloud));
}

TEST_CASE("heuristic keypoints on a T-hammer", "[keypoints]") {
  auto cloud = t_hammer_cloud(7);
  auto k = heuristic_keypoints(cloud, TaskKind::hammering, 11);

  // Grasp on the handle, between the butt and the midpoint.
  CHECK(std::abs(k.x_g.y) < 0.02);
  CHECK(k.x_g.x > -0.08);
  CHECK(k.x_g.x < 0.01);

  // Function point within 10 mm of a head extremity (0.09, +-0.025).
  CHECK(std::abs(k.x_f.x - 0.09) < 0.015);
  CHECK(std::abs(std::abs(k.x_f.y) - 0.025) < 0.01);

  // Effect direction roughly perpendicular to the handle.
  Vec2 u = k.x_e - k.x_f;
  CHECK(std::abs(u.norm() - 1.0) < 1e-9);
  CHECK(std::abs(u.x) < 0.3);
  // Pointing away from the axis.
  CHECK(u.y * k.x_f.y > 0.0);
}

TEST_CASE("heuristic falls back to the far endpoint on sticks", "[keypoints]") {
  auto cloud = stick(4);
  auto k = heuristic_keypoints(cloud, TaskKind::reaching, 9);
  // Far endpoint: |x| near 0.1, and farther from the grasp than the middle.
  CHECK(std::abs(k.x_f.x) > 0.08);
  Vec2 u = k.x_e - k.x_f;
  CHECK(std::abs(u.norm() - 1.0) < 1e-9);
  // Reaching: effect along the stick axis, away from the grasp.
  CHECK(std::abs(u.y) < 0.3);
  CHECK(u.x * (k.x_f.x - k.x_g.x) > 0.0);
}

TEST_CASE("heuristic keypoints are deterministic", "[keypoints]") {
  auto cloud = t_hammer_cloud(3);
  auto a = heuristic_keypoints(cloud, TaskKind::pushing, 21);
  auto b = heuristic_keypoints(cloud, TaskKind::pushing, 21);
  CHECK(a.x_g.x == b.x_g.x);
  CHECK(a.x_f.y == b.x_f.y);
  CHECK(a.x_e.x == b.x_e.x);
}

TEST_CASE("heuristic output validates on generated tools", "[keypoints]") {
  // Fuzz across categories and tasks (larger sweep lives in acceptance).
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 150; ++seed) {
    auto spec = generate_tool(
        seed % 2 ? ToolCategory::hammer : ToolCategory::non_hammer, seed);
    auto cloud = render_cloud(spec, 256, 0.001, seed);
    for (auto task :
         {TaskKind::hammering, TaskKind::pushing, TaskKind::reaching}) {
      auto k = heuristic_keypoints(cloud, task, seed);
      CHECK(validate_keypoints(k, cloud));
      ++checked;
    }
  }
  CHECK(checked == 450);
}

TEST_CASE("template self-retrieval is exact", "[keypoints]") {
  TemplateLibrary lib;
  std::vector<PointCloud> clouds;
  for (std::uint64_t s = 0; s < 4; ++s) {
    auto spec = generate_tool(
        s % 2 ? ToolCategory::hammer : ToolCategory::non_hammer, 40 + s);
    clouds.push_back(render_cloud(spec, 600, 0.001, s));
    auto k = heuristic_keypoints(clouds.back(), TaskKind::hammering, s);
    lib.add(clouds.back(), k);
  }
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    auto m = lib.retrieve(clouds[i]);
    CHECK(m.entry == i);
    CHECK(m.rotation == 0);
    CHECK(m.distance <= 1e-18);
  }
  // Transferred keypoints equal the stored ones.
  auto k0 = heuristic_keypoints(clouds[0], TaskKind::hammering, 0);
  auto t = lib.predict(clouds[0]);
  CHECK((t.x_g - k0.x_g).norm() < 1e-6);
  CHECK((t.x_f - k0.x_f).norm() < 1e-6);
  CHECK((t.x_e - k0.x_e).norm() < 1e-6);
}

TEST_CASE("template transfer is rotation equivariant", "[keypoints]") {
  auto cloud = t_hammer_cloud(13);
  auto k = heuristic_keypoints(cloud, TaskKind::hammering, 2);
  TemplateLibrary lib;
  lib.add(cloud, k);

  double angle = kPi / 2.0;  // one of the 36 grid angles
  Vec2 c = cloud.centroid_xy();
  auto rotated = transform_cloud(cloud, PlanarPose{0, 0, angle}, c);
  auto m = lib.retrieve(rotated);
  CHECK(m.entry == 0);
  CHECK(m.rotation == 9);
  CHECK(m.distance <= 1e-18);

  auto t = lib.predict(rotated);
  Vec2 expected_g = (k.x_g - c).rotated(angle) + c;
  Vec2 expected_f = (k.x_f - c).rotated(angle) + c;
  CHECK((t.x_g - expected_g).norm() < 1e-6);
  CHECK((t.x_f - expected_f).norm() < 1e-6);
}

TEST_CASE("template tie breaks toward library order", "[keypoints]") {
  auto cloud = stick(30);
  auto k = heuristic_keypoints(cloud, TaskKind::pushing, 1);
  TemplateLibrary lib;
  lib.add(cloud, k);
  lib.add(cloud, k);  // identical entry
  auto m = lib.retrieve(cloud);
  CHECK(m.entry == 0);
}

TEST_CASE("template errors", "[keypoints]") {
  auto cloud = stick(5);
  REQUIRE_THROWS_MATCHES(template_keypoints(cloud, {}), Error,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("empty-library")));
}

TEST_CASE("keypoint text format round-trips", "[keypoints]") {
  ToolKeypoints k;
  k.x_g = {0.0123456789, -0.04};
  k.x_f = {0.11, 0.0625};
  k.x_e = {0.11, 1.0625};
  auto text = format_keypoints(k);
  auto back = parse_keypoints(text);
  CHECK(back.x_g.x == k.x_g.x);
  CHECK(back.x_f.y == k.x_f.y);
  CHECK(back.x_e.y == k.x_e.y);
  REQUIRE_THROWS_AS(parse_keypoints("1,2,3"), Error);
}
