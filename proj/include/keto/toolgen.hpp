// keto - keypoint-driven tool manipulation lab
//
// Procedural tool objects: unions of convex parts (box / capsule / disk
// footprints) with per-part heights, plus area-uniform top-surface cloud
// rendering. Categories follow the hammer / non-hammer split.

#ifndef KETO_TOOLGEN_HPP
#define KETO_TOOLGEN_HPP

#include <array>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "keto/geometry.hpp"

namespace keto {

enum class PartShape { box, capsule, disk };
enum class ToolCategory { hammer, non_hammer };

inline std::string to_string(PartShape s) {
  switch (s) {
    case PartShape::box: return "box";
    case PartShape::capsule: return "capsule";
    case PartShape::disk: return "disk";
  }
  return "box";
}

inline std::string to_string(ToolCategory c) {
  return c == ToolCategory::hammer ? "hammer" : "non-hammer";
}

inline PartShape part_shape_from_string(const std::string& s) {
  if (s == "box") return PartShape::box;
  if (s == "capsule") return PartShape::capsule;
  if (s == "disk") return PartShape::disk;
  fail("parse-error", "unknown part shape: " + s);
}

inline ToolCategory category_from_string(const std::string& s) {
  if (s == "hammer") return ToolCategory::hammer;
  if (s == "non-hammer") return ToolCategory::non_hammer;
  fail("parse-error", "unknown tool category: " + s);
}

/// One convex part. The local footprint is centered at the origin with the
/// long axis along local x; `pose` maps local into the tool frame.
/// length = extent along local x, width = extent along local y (for disks
/// both equal the diameter; for capsules width is twice the cap radius).
struct ToolPart {
  PartShape shape = PartShape::box;
  double length = 0.1;
  double width = 0.02;
  double height = 0.02;
  PlanarPose pose;

  /// Extent perpendicular to the long axis (reaching's thin-part measure).
  double thickness() const { return width; }

  double area() const {
    double r = width / 2.0;
    switch (shape) {
      case PartShape::box: return length * width;
      case PartShape::capsule: return (length - width) * width + kPi * r * r;
      case PartShape::disk: return kPi * r * r;
    }
    return 0.0;
  }

  /// Membership test for a point given in the tool frame.
  bool contains(Vec2 tool_pt) const {
    // Tool frame -> local frame.
    Vec2 d = tool_pt - pose.xy();
    Vec2 local = d.rotated(-pose.theta);
    double hx = length / 2.0, hy = width / 2.0;
    switch (shape) {
      case PartShape::box:
        return std::abs(local.x) <= hx && std::abs(local.y) <= hy;
      case PartShape::capsule: {
        double a = std::max(0.0, hx - hy);
        double cx = std::clamp(local.x, -a, a);
        double dx = local.x - cx;
        return dx * dx + local.y * local.y <= hy * hy;
      }
      case PartShape::disk:
        return local.norm2() <= hy * hy;
    }
    return false;
  }

  /// Uniform point on the footprint, in the tool frame.
  Vec2 sample_point(Rng& rng) const {
    double hx = length / 2.0, hy = width / 2.0;
    Vec2 local{};
    switch (shape) {
      case PartShape::box:
        local = {rng.uniform(-hx, hx), rng.uniform(-hy, hy)};
        break;
      case PartShape::capsule: {
        double a = std::max(0.0, hx - hy);
        double rect_area = 2.0 * a * width;
        double cap_area = kPi * hy * hy;
        if (rng.uniform() * (rect_area + cap_area) < rect_area) {
          local = {rng.uniform(-a, a), rng.uniform(-hy, hy)};
        } else {
          double r = hy * std::sqrt(rng.uniform());
          double t = rng.uniform(0.0, kTwoPi);
          local = {r * std::cos(t), r * std::sin(t)};
          local.x += (local.x >= 0.0 ? a : -a);
        }
        break;
      }
      case PartShape::disk: {
        double r = hy * std::sqrt(rng.uniform());
        double t = rng.uniform(0.0, kTwoPi);
        local = {r * std::cos(t), r * std::sin(t)};
        break;
      }
    }
    return local.rotated(pose.theta) + pose.xy();
  }

  /// Footprint centroid in the tool frame (all shapes are symmetric).
  Vec2 centroid() const { return pose.xy(); }

  /// Max distance from `c` (tool frame) to any footprint point.
  double far_distance(Vec2 c) const {
    double hx = length / 2.0, hy = width / 2.0;
    switch (shape) {
      case PartShape::box: {
        double best = 0.0;
        for (int sx = -1; sx <= 1; sx += 2) {
          for (int sy = -1; sy <= 1; sy += 2) {
            Vec2 corner = Vec2{sx * hx, sy * hy}.rotated(pose.theta) + pose.xy();
            best = std::max(best, (corner - c).norm());
          }
        }
        return best;
      }
      case PartShape::capsule: {
        double a = std::max(0.0, hx - hy);
        double best = 0.0;
        for (int sx = -1; sx <= 1; sx += 2) {
          Vec2 cap = Vec2{sx * a, 0.0}.rotated(pose.theta) + pose.xy();
          best = std::max(best, (cap - c).norm() + hy);
        }
        return best;
      }
      case PartShape::disk:
        return (pose.xy() - c).norm() + hy;
    }
    return 0.0;
  }
};

/// A complete procedural tool: 1-4 connected convex parts.
struct ToolSpec {
  std::string id;
  ToolCategory category = ToolCategory::non_hammer;
  std::vector<ToolPart> parts;
  std::uint64_t seed = 0;

  bool contains(Vec2 tool_pt) const {
    for (const auto& p : parts) {
      if (p.contains(tool_pt)) return true;
    }
    return false;
  }

  double total_area() const {
    double a = 0.0;
    for (const auto& p : parts) a += p.area();
    return a;
  }

  /// Area-weighted centroid of part footprints (overlaps double-counted).
  Vec2 centroid() const {
    Vec2 c{};
    double a = 0.0;
    for (const auto& p : parts) {
      c += p.centroid() * p.area();
      a += p.area();
    }
    return a > 0.0 ? c / a : c;
  }

  double bounding_radius() const {
    Vec2 c = centroid();
    double r = 0.0;
    for (const auto& p : parts) r = std::max(r, p.far_distance(c));
    return r;
  }
};

namespace detail {

/// Overlap area between `part` and the union of `prior`, estimated on a
/// 1 mm grid over the part's bounding box. Deterministic.
inline double overlap_area(const ToolPart& part,
                           const std::vector<ToolPart>& prior) {
  Vec2 c = part.centroid();
  double reach = part.far_distance(c);
  const double cell = 0.001;
  int half = static_cast<int>(std::ceil(reach / cell)) + 1;
  std::size_t hits = 0;
  for (int ix = -half; ix <= half; ++ix) {
    for (int iy = -half; iy <= half; ++iy) {
      Vec2 q{c.x + ix * cell, c.y + iy * cell};
      if (!part.contains(q)) continue;
      for (const auto& pp : prior) {
        if (pp.contains(q)) {
          ++hits;
          break;
        }
      }
    }
  }
  return static_cast<double>(hits) * cell * cell;
}

inline bool tool_invariants_ok(const ToolSpec& spec) {
  if (spec.parts.empty() || spec.parts.size() > 4) return false;
  for (const auto& p : spec.parts) {
    if (p.length < 0.005 || p.length > 0.30) return false;
    if (p.width < 0.005 || p.width > 0.30) return false;
    if (p.width > p.length + 1e-12) return false;
    if (p.height < 0.005 || p.height > 0.30) return false;
  }
  double r = spec.bounding_radius();
  if (r < 0.08 || r > 0.25) return false;
  if (spec.category == ToolCategory::hammer) {
    if (spec.parts.size() != 2) return false;
    if (spec.parts[0].length < 2.0 * spec.parts[1].length) return false;
  }
  // Connectivity: every part after the first overlaps the prior union.
  for (std::size_t i = 1; i < spec.parts.size(); ++i) {
    std::vector<ToolPart> prior(spec.parts.begin(),
                                spec.parts.begin() + static_cast<long>(i));
    if (overlap_area(spec.parts[i], prior) < 1e-6) return false;
  }
  return true;
}

inline ToolPart draw_handle(Rng& rng) {
  ToolPart p;
  p.shape = rng.bernoulli(0.5) ? PartShape::box : PartShape::capsule;
  p.length = rng.uniform(0.12, 0.22);
  p.width = rng.uniform(0.013, 0.028);
  p.height = rng.uniform(0.01, 0.03);
  p.pose = {};
  return p;
}

inline ToolPart draw_head(Rng& rng, const ToolPart& handle) {
  ToolPart p;
  double u = rng.uniform();
  p.shape = u < 0.4 ? PartShape::box : (u < 0.8 ? PartShape::capsule : PartShape::disk);
  if (p.shape == PartShape::disk) {
    double d = rng.uniform(0.03, 0.05);
    p.length = p.width = d;
  } else {
    p.length = rng.uniform(0.04, std::min(0.08, handle.length / 2.0));
    p.width = rng.uniform(0.02, 0.035);
  }
  p.height = rng.uniform(0.02, 0.04);
  double off = rng.uniform(-0.5, 0.5) * p.length / 2.0;
  p.pose = PlanarPose::make(handle.length / 2.0, off, kPi / 2.0);
  return p;
}

inline ToolPart draw_blob_part(Rng& rng) {
  ToolPart p;
  double u = rng.uniform();
  p.shape = u < 0.45 ? PartShape::box : (u < 0.8 ? PartShape::capsule : PartShape::disk);
  if (p.shape == PartShape::disk) {
    double d = rng.uniform(0.03, 0.1);
    p.length = p.width = d;
  } else {
    p.length = rng.uniform(0.06, 0.22);
    p.width = rng.uniform(0.012, std::min(0.045, p.length));
  }
  p.height = rng.uniform(0.01, 0.04);
  return p;
}

}  // namespace detail

/// Deterministically generates a tool satisfying all category invariants;
/// rejection-samples and aborts after 1000 failed draws.
inline ToolSpec generate_tool(ToolCategory category, std::uint64_t seed) {
  Rng rng(mix_seed(seed, category == ToolCategory::hammer ? 0x48414Dull
                                                          : 0x424C4Full));
  for (int attempt = 0; attempt < 1000; ++attempt) {
    ToolSpec spec;
    spec.category = category;
    spec.seed = seed;
    if (category == ToolCategory::hammer) {
      ToolPart handle = detail::draw_handle(rng);
      ToolPart head = detail::draw_head(rng, handle);
      spec.parts = {handle, head};
    } else {
      std::size_t n = 1 + rng.uniform_int(4);
      ToolPart first = detail::draw_blob_part(rng);
      first.pose = {};
      spec.parts = {first};
      bool placed_all = true;
      for (std::size_t i = 1; i < n; ++i) {
        bool placed = false;
        for (int tries = 0; tries < 50 && !placed; ++tries) {
          ToolPart p = detail::draw_blob_part(rng);
          const ToolPart& anchor = spec.parts[rng.uniform_int(spec.parts.size())];
          Vec2 at = anchor.sample_point(rng);
          p.pose = PlanarPose::make(at.x, at.y, rng.uniform(-kPi, kPi));
          if (detail::overlap_area(p, spec.parts) >= 1e-6) {
            spec.parts.push_back(p);
            placed = true;
          }
        }
        if (!placed) {
          placed_all = false;
          break;
        }
      }
      if (!placed_all) continue;
    }
    if (detail::tool_invariants_ok(spec)) return spec;
  }
  fail("generation-failed", "no valid tool after 1000 rejections");
}

/// Samples m points uniformly by area from the top surface of the part
/// union, then adds Gaussian (x, y) noise. z is the tallest part covering
/// the clean sample location. Deterministic in seed.
inline PointCloud render_cloud(const ToolSpec& spec, std::size_t m,
                               double noise_sd, std::uint64_t seed) {
  if (spec.parts.empty() || spec.total_area() <= 0.0) {
    fail("generation-failed", "degenerate tool spec");
  }
  Rng rng(mix_seed(mix_seed(seed, 0x524E44ull), spec.seed));

  std::vector<double> cum;
  cum.reserve(spec.parts.size());
  double acc = 0.0;
  for (const auto& p : spec.parts) {
    acc += p.area();
    cum.push_back(acc);
  }

  PointCloud out;
  out.points.reserve(m);
  std::size_t guard = 0;
  while (out.points.size() < m) {
    if (++guard > 1000 * m) fail("generation-failed", "sampling stalled");
    double u = rng.uniform() * acc;
    std::size_t i = 0;
    while (i + 1 < cum.size() && u > cum[i]) ++i;
    Vec2 q = spec.parts[i].sample_point(rng);
    // Uniform over the union: keep only when drawn from the lowest-index
    // part containing the sample.
    std::size_t owner = spec.parts.size();
    double z = 0.0;
    for (std::size_t j = 0; j < spec.parts.size(); ++j) {
      if (spec.parts[j].contains(q)) {
        if (owner == spec.parts.size()) owner = j;
        z = std::max(z, spec.parts[j].height);
      }
    }
    if (owner != i) continue;
    double nx = noise_sd > 0.0 ? rng.normal() * noise_sd : 0.0;
    double ny = noise_sd > 0.0 ? rng.normal() * noise_sd : 0.0;
    out.points.push_back({q.x + nx, q.y + ny, z});
  }
  return out;
}

// ---------------------------------------------------------------------------
// ToolSpec persistence (line-delimited JSON)
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const ToolSpec& spec) {
  nlohmann::json parts = nlohmann::json::array();
  for (const auto& p : spec.parts) {
    parts.push_back({{"shape", to_string(p.shape)},
                     {"length", p.length},
                     {"width", p.width},
                     {"height", p.height},
                     {"pose", {p.pose.x, p.pose.y, p.pose.theta}}});
  }
  return nlohmann::json{{"id", spec.id},
                        {"category", to_string(spec.category)},
                        {"seed", spec.seed},
                        {"parts", parts}};
}

inline ToolSpec toolspec_from_json(const nlohmann::json& j) {
  ToolSpec spec;
  spec.id = j.at("id").get<std::string>();
  spec.category = category_from_string(j.at("category").get<std::string>());
  spec.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& jp : j.at("parts")) {
    ToolPart p;
    p.shape = part_shape_from_string(jp.at("shape").get<std::string>());
    p.length = jp.at("length").get<double>();
    p.width = jp.at("width").get<double>();
    p.height = jp.at("height").get<double>();
    auto pose = jp.at("pose");
    p.pose = PlanarPose::make(pose.at(0).get<double>(), pose.at(1).get<double>(),
                              pose.at(2).get<double>());
    spec.parts.push_back(p);
  }
  return spec;
}

inline void save_toolspecs(const std::string& path,
                           const std::vector<ToolSpec>& specs) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail("io-error", "cannot open " + path + " for writing");
  for (const auto& s : specs) out << to_json(s).dump() << "\n";
  if (!out) fail("io-error", "short write to " + path);
}

inline std::vector<ToolSpec> load_toolspecs(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("io-error", "cannot open " + path);
  std::vector<ToolSpec> specs;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    specs.push_back(toolspec_from_json(nlohmann::json::parse(line)));
  }
  return specs;
}

}  // namespace keto

#endif  // KETO_TOOLGEN_HPP
