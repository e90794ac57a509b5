#include <catch2/catch_amalgamated.hpp>

#include "keto/creator.hpp"
#include "keto/toolgen.hpp"

using namespace keto;

namespace {

PointCloud part_cloud(PartShape shape, double length, double width,
                      std::size_t n, std::uint64_t seed) {
  ToolSpec spec;
  ToolPart part;
  part.shape = shape;
  part.length = length;
  part.width = width;
  part.height = 0.02;
  spec.parts = {part};
  return render_cloud(spec, n, 0.0, seed);
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1e-9, std::abs(a), std::abs(b)});
}

NetParams random_eval_params(std::uint64_t seed) {
  EvalNet<float> net;
  net.init(seed);
  Rng rng(mix_seed(seed, 1));
  for (auto& w : net.head.l3.W) w = static_cast<float>(rng.uniform(-0.3, 0.3));
  return to_params(net);
}

ToolKeypoints world_keypoints(std::uint64_t seed) {
  Rng rng(seed);
  ToolKeypoints k;
  k.x_g = {rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1)};
  k.x_f = k.x_g + Vec2{rng.uniform(0.05, 0.15), rng.uniform(-0.05, 0.05)};
  double a = rng.uniform(-kPi, kPi);
  k.x_e = k.x_f + Vec2{std::cos(a), std::sin(a)};
  return k;
}

}  // namespace

TEST_CASE("assemble with identity poses concatenates verbatim", "[creator]") {
  auto a = part_cloud(PartShape::box, 0.12, 0.02, 64, 1);
  auto b = part_cloud(PartShape::disk, 0.05, 0.05, 48, 2);
  auto out = assemble({a, b}, {PartPose{}, PartPose{}});
  REQUIRE(out.count() == a.count() + b.count());
  for (std::size_t i = 0; i < a.count(); ++i) {
    CHECK(out.points[i].x == Catch::Approx(a.points[i].x).margin(1e-15));
  }
  for (std::size_t i = 0; i < b.count(); ++i) {
    CHECK(out.points[a.count() + i].y ==
          Catch::Approx(b.points[i].y).margin(1e-15));
  }
}

TEST_CASE("assemble translates a single part", "[creator]") {
  auto a = part_cloud(PartShape::box, 0.1, 0.03, 64, 3);
  auto out = assemble({a}, {PartPose{0.1, 0.0, 0.0}});
  for (std::size_t i = 0; i < a.count(); ++i) {
    CHECK(out.points[i].x == Catch::Approx(a.points[i].x + 0.1).margin(1e-12));
    CHECK(out.points[i].y == Catch::Approx(a.points[i].y).margin(1e-12));
  }
}

TEST_CASE("assemble preserves within-part distances", "[creator]") {
  auto a = part_cloud(PartShape::capsule, 0.14, 0.03, 48, 4);
  auto b = part_cloud(PartShape::box, 0.08, 0.04, 40, 5);
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<PartPose> poses{
        {rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-kPi, kPi)},
        {rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-kPi, kPi)}};
    auto out = assemble({a, b}, poses);
    for (std::size_t i = 1; i < a.count(); ++i) {
      double before = (a.points[i].xy() - a.points[0].xy()).norm();
      double after = (out.points[i].xy() - out.points[0].xy()).norm();
      CHECK(std::abs(before - after) <= 1e-9);
    }
  }
}

TEST_CASE("assemble is permutation covariant under chamfer", "[creator]") {
  auto a = part_cloud(PartShape::box, 0.1, 0.02, 40, 7);
  auto b = part_cloud(PartShape::disk, 0.06, 0.06, 36, 8);
  std::vector<PartPose> poses{{0.02, 0.01, 0.3}, {-0.04, 0.03, -0.8}};
  auto ab = assemble({a, b}, poses);
  auto ba = assemble({b, a}, {poses[1], poses[0]});
  auto ref = part_cloud(PartShape::capsule, 0.12, 0.04, 50, 9);
  CHECK(std::abs(chamfer_distance(ab, ref) - chamfer_distance(ba, ref)) <=
        1e-12);
}

TEST_CASE("assemble rejects mismatched lengths", "[creator]") {
  auto a = part_cloud(PartShape::box, 0.1, 0.02, 32, 10);
  REQUIRE_THROWS_MATCHES(assemble({a}, {}), Error,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("bad-parts")));
}

TEST_CASE("translation gradient equals summed point gradients", "[creator]") {
  // Chain-rule identity: with phi = 0 the translation gradient is the sum
  // of the world-space point gradients of that part, which finite
  // differences confirm directly.
  auto a = part_cloud(PartShape::box, 0.12, 0.03, 48, 11);
  auto b = part_cloud(PartShape::box, 0.05, 0.04, 40, 12);
  auto params = random_eval_params(13);
  auto net = eval_from_params<double>(params);
  auto k = world_keypoints(14);
  std::vector<PartPose> poses{{0.0, 0.0, 0.0}, {0.07, 0.01, 0.4}};

  auto grad = creation_gradient({a, b}, poses, k, net);
  const double h = 1e-5;
  for (int axis = 0; axis < 2; ++axis) {
    auto plus = poses, minus = poses;
    (axis == 0 ? plus[0].tx : plus[0].ty) += h;
    (axis == 0 ? minus[0].tx : minus[0].ty) -= h;
    double fd = (creation_score({a, b}, plus, k, net) -
                 creation_score({a, b}, minus, k, net)) /
                (2 * h);
    double an = axis == 0 ? grad[0].tx : grad[0].ty;
    CHECK(rel_err(fd, an) <= 1e-3);
  }
}

TEST_CASE("pose gradients match finite differences", "[creator]") {
  auto a = part_cloud(PartShape::capsule, 0.14, 0.025, 44, 21);
  auto b = part_cloud(PartShape::box, 0.06, 0.04, 36, 22);
  auto params = random_eval_params(23);
  auto net = eval_from_params<double>(params);

  Rng rng(24);
  int checked = 0;
  for (int trial = 0; trial < 12; ++trial) {
    auto k = world_keypoints(100 + trial);
    std::vector<PartPose> poses{
        {rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-1.0, 1.0)},
        {rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-1.0, 1.0)}};
    auto grad = creation_gradient({a, b}, poses, k, net);
    for (std::size_t pi = 0; pi < poses.size(); ++pi) {
      for (int field = 0; field < 3; ++field) {
        auto fd_at = [&](double h) {
          auto plus = poses, minus = poses;
          double* pp = field == 0 ? &plus[pi].tx
                                  : (field == 1 ? &plus[pi].ty : &plus[pi].phi);
          double* pm = field == 0 ? &minus[pi].tx
                                  : (field == 1 ? &minus[pi].ty : &minus[pi].phi);
          *pp += h;
          *pm -= h;
          return (creation_score({a, b}, plus, k, net) -
                  creation_score({a, b}, minus, k, net)) /
                 (2 * h);
        };
        double fd = fd_at(1e-5);
        double fd_half = fd_at(5e-6);
        // Skip probes that straddle a kink of the piecewise-smooth score
        // (scale argmax or PCA sign flips inside the stencil).
        if (rel_err(fd, fd_half) > 2e-4) continue;
        double an = field == 0 ? grad[pi].tx
                               : (field == 1 ? grad[pi].ty : grad[pi].phi);
        if (std::abs(fd) < 1e-10 && std::abs(an) < 1e-10) continue;
        INFO("trial " << trial << " part " << pi << " field " << field);
        CHECK(rel_err(fd, an) <= 1e-3);
        ++checked;
      }
    }
  }
  CHECK(checked >= 40);
}

TEST_CASE("a single part's own rotation does not move the score",
          "[creator]") {
  // Canonicalization absorbs any rigid motion of a single-part assembly:
  // the rotation gradient of a noise-free disk vanishes to machine
  // precision (and so does its translation gradient, which normalization
  // absorbs as well).
  auto disk = part_cloud(PartShape::disk, 0.1, 0.1, 256, 31);
  auto params = random_eval_params(32);
  auto net = eval_from_params<double>(params);
  auto k = world_keypoints(33);
  std::vector<PartPose> poses{{0.03, -0.02, 0.7}};
  auto grad = creation_gradient({disk}, poses, k, net);
  double tnorm = std::sqrt(grad[0].tx * grad[0].tx + grad[0].ty * grad[0].ty);
  CHECK(std::abs(grad[0].phi) <= 1e-6 * (tnorm + 1e-9));
  CHECK(tnorm <= 1e-12);

  // Direct symmetry oracle: rotating the disk leaves the score unchanged.
  double s0 = creation_score({disk}, poses, k, net);
  auto rotated = poses;
  rotated[0].phi += 0.37;
  double s1 = creation_score({disk}, rotated, k, net);
  CHECK(std::abs(s1 - s0) <= 1e-12);
}

TEST_CASE("score trajectory is non-decreasing from random starts",
          "[creator]") {
  auto a = part_cloud(PartShape::box, 0.12, 0.025, 40, 41);
  auto b = part_cloud(PartShape::box, 0.05, 0.04, 32, 42);
  auto params = random_eval_params(43);
  Rng rng(44);
  CreationOptions opts;
  opts.max_iters = 12;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<PartPose> init{
        {rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-kPi, kPi)},
        {rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-kPi, kPi)}};
    auto k = world_keypoints(500 + trial);
    auto result = create_tool({a, b}, k, params, opts, init);
    for (std::size_t i = 1; i < result.score_trajectory.size(); ++i) {
      CHECK(result.score_trajectory[i] > result.score_trajectory[i - 1]);
    }
    CHECK(result.pose_history.size() + 1 == result.score_trajectory.size());
  }
}

TEST_CASE("rerunning from a terminal point accepts no further steps",
          "[creator]") {
  auto a = part_cloud(PartShape::box, 0.1, 0.03, 36, 51);
  auto b = part_cloud(PartShape::disk, 0.05, 0.05, 28, 52);
  auto params = random_eval_params(53);
  auto k = world_keypoints(54);
  CreationOptions opts;
  opts.max_iters = 200;
  auto first = create_tool({a, b}, k, params, opts);
  auto second = create_tool({a, b}, k, params, opts, first.poses);
  CHECK(second.score_trajectory.size() == 1);
  if (first.converged) CHECK(second.converged);
}
