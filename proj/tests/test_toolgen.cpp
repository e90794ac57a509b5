#include <catch2/catch_amalgamated.hpp>

#include <cstdio>

#include "keto/toolgen.hpp"

using namespace keto;

namespace {

// Test-side membership oracle, reimplemented independently of
// ToolPart::contains.
bool oracle_inside(const ToolPart& part, Vec2 q) {
  double c = std::cos(-part.pose.theta), s = std::sin(-part.pose.theta);
  double dx = q.x - part.pose.x, dy = q.y - part.pose.y;
  double lx = c * dx - s * dy, ly = s * dx + c * dy;
  double hl = part.length / 2.0, hw = part.width / 2.0;
  switch (part.shape) {
    case PartShape::box:
      return std::abs(lx) <= hl + 1e-12 && std::abs(ly) <= hw + 1e-12;
    case PartShape::capsule: {
      double a = hl - hw;
      double px = std::min(std::max(lx, -a), a);
      return (lx - px) * (lx - px) + ly * ly <= hw * hw + 1e-12;
    }
    case PartShape::disk:
      return lx * lx + ly * ly <= hw * hw + 1e-12;
  }
  return false;
}

// Andrew monotone chain convex hull, for the footprint-area oracle.
double hull_area(std::vector<Vec2> pts) {
  std::sort(pts.begin(), pts.end(), [](Vec2 a, Vec2 b) {
    return a.x < b.x || (a.x == b.x && a.y < b.y);
  });
  auto cross = [](Vec2 o, Vec2 a, Vec2 b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
  };
  std::vector<Vec2> hull(2 * pts.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  std::size_t lower = k + 1;
  for (std::size_t i = pts.size() - 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k > 0 ? k - 1 : 0);
  double area = 0.0;
  for (std::size_t i = 0; i < hull.size(); ++i) {
    Vec2 a = hull[i], b = hull[(i + 1) % hull.size()];
    area += a.x * b.y - b.x * a.y;
  }
  return std::abs(area) / 2.0;
}

}  // namespace

TEST_CASE("generate_tool is deterministic", "[toolgen]") {
  auto a = generate_tool(ToolCategory::hammer, 1);
  auto b = generate_tool(ToolCategory::hammer, 1);
  REQUIRE(a.parts.size() == b.parts.size());
  for (std::size_t i = 0; i < a.parts.size(); ++i) {
    CHECK(a.parts[i].length == b.parts[i].length);
    CHECK(a.parts[i].pose.theta == b.parts[i].pose.theta);
  }
}

TEST_CASE("hammers have a dominant handle and two parts", "[toolgen]") {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    auto spec = generate_tool(ToolCategory::hammer, seed);
    REQUIRE(spec.parts.size() == 2);
    CHECK(spec.parts[0].length >= 2.0 * spec.parts[1].length);
    double r = spec.bounding_radius();
    CHECK(r >= 0.08);
    CHECK(r <= 0.25);
  }
}

TEST_CASE("non-hammers have 1-4 connected parts in range", "[toolgen]") {
  std::size_t multi = 0;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    auto spec = generate_tool(ToolCategory::non_hammer, seed);
    REQUIRE(spec.parts.size() >= 1);
    REQUIRE(spec.parts.size() <= 4);
    if (spec.parts.size() > 1) ++multi;
    for (const auto& p : spec.parts) {
      CHECK(p.length >= 0.005);
      CHECK(p.length <= 0.30);
      CHECK(p.width >= 0.005);
      CHECK(p.width <= 0.30);
    }
    double r = spec.bounding_radius();
    CHECK(r >= 0.08);
    CHECK(r <= 0.25);
  }
  CHECK(multi > 5);
}

TEST_CASE("distinct seeds give distinct tools", "[toolgen]") {
  std::size_t distinct = 0;
  auto ref = generate_tool(ToolCategory::hammer, 0);
  for (std::uint64_t seed = 1; seed <= 200; ++seed) {
    auto spec = generate_tool(ToolCategory::hammer, seed);
    if (spec.parts[0].length != ref.parts[0].length) ++distinct;
  }
  CHECK(distinct == 200);
}

TEST_CASE("render_cloud samples inside the union footprint", "[toolgen]") {
  for (std::uint64_t seed : {3ull, 14ull}) {
    auto spec = generate_tool(ToolCategory::hammer, seed);
    auto cloud = render_cloud(spec, 1024, 0.0, seed);
    REQUIRE(cloud.count() == 1024);
    for (const auto& p : cloud.points) {
      bool inside = false;
      for (const auto& part : spec.parts) {
        if (oracle_inside(part, p.xy())) inside = true;
      }
      CHECK(inside);
      CHECK(p.z > 0.0);
    }
  }
}

TEST_CASE("render_cloud determinism", "[toolgen]") {
  auto spec = generate_tool(ToolCategory::non_hammer, 8);
  auto a = render_cloud(spec, 512, 0.001, 5);
  auto b = render_cloud(spec, 512, 0.001, 5);
  for (std::size_t i = 0; i < a.count(); ++i) {
    CHECK(a.points[i].x == b.points[i].x);
    CHECK(a.points[i].y == b.points[i].y);
  }
}

TEST_CASE("render_cloud footprint area matches the box", "[toolgen]") {
  ToolSpec spec;
  spec.category = ToolCategory::non_hammer;
  ToolPart part;
  part.shape = PartShape::box;
  part.length = 0.2;
  part.width = 0.1;
  part.height = 0.02;
  spec.parts = {part};
  auto cloud = render_cloud(spec, 10000, 0.0, 2);
  std::vector<Vec2> pts;
  for (const auto& p : cloud.points) pts.push_back(p.xy());
  double area = hull_area(pts);
  CHECK(area == Catch::Approx(0.02).epsilon(0.05));
}

TEST_CASE("rendered centroid stays inside the bounding circle", "[toolgen]") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto spec = generate_tool(ToolCategory::non_hammer, 500 + seed);
    auto cloud = render_cloud(spec, 512, 0.001, seed);
    Vec2 c = cloud.centroid_xy();
    CHECK((c - spec.centroid()).norm() <= spec.bounding_radius());
  }
}

TEST_CASE("tool specs round-trip through JSONL", "[toolgen][io]") {
  std::vector<ToolSpec> specs;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto s = generate_tool(seed % 2 ? ToolCategory::hammer
                                    : ToolCategory::non_hammer,
                           seed);
    s.id = "tool-" + std::to_string(seed);
    specs.push_back(s);
  }
  std::string path = "test_tools_roundtrip.jsonl";
  save_toolspecs(path, specs);
  auto back = load_toolspecs(path);
  REQUIRE(back.size() == specs.size());
  for (std::size_t i = 0; i < specs.size(); ++i) {
    CHECK(back[i].id == specs[i].id);
    CHECK(back[i].category == specs[i].category);
    REQUIRE(back[i].parts.size() == specs[i].parts.size());
    for (std::size_t j = 0; j < specs[i].parts.size(); ++j) {
      CHECK(back[i].parts[j].length == specs[i].parts[j].length);
      CHECK(back[i].parts[j].pose.theta == specs[i].parts[j].pose.theta);
    }
  }
  std::remove(path.c_str());
}
