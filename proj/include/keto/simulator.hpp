// keto - keypoint-driven tool manipulation lab
//
// Planar quasi-static task environment: scene construction for the
// hammering / pushing / reaching tasks, antipodal top-down grasp sampling
// on point clouds, and the swept-motion executor that produces binary
// success labels for self-supervision.

#ifndef KETO_SIMULATOR_HPP
#define KETO_SIMULATOR_HPP

#include <algorithm>
#include <unordered_map>
#include <vector>

#include "keto/optimizer.hpp"
#include "keto/simulator_types.hpp"

namespace keto {

// ---------------------------------------------------------------------------
// Scene construction
// ---------------------------------------------------------------------------

/// Deterministic task instance with a randomized frame: the force
/// direction, target jitter and tool staging pose all derive from seed.
inline TaskScene make_task(TaskKind kind, std::uint64_t seed) {
  namespace sc = scene_constants;
  Rng rng(mix_seed(seed, 0x5343454Eull));
  TaskScene scene;
  scene.kind = kind;
  scene.seed = seed;
  scene.threshold = task_threshold(kind);

  double phi = rng.uniform(-kPi, kPi);
  Vec2 e{std::cos(phi), std::sin(phi)};
  Vec2 perp = e.perp();
  Vec2 xt{rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05)};
  scene.env.target = xt;
  scene.env.receiver = xt + e * 0.1;

  const double wall_half_thickness = 0.006;
  switch (kind) {
    case TaskKind::hammering: {
      scene.targets.push_back({xt, sc::kNailRadius});
      // Slot walls flank the nail's drive line. A function-anchored strike
      // carries its leading face threshold + 0.02 past the nail, so the
      // face's last 5 mm of travel runs between the walls: strikers wider
      // than the slot over that leading stretch collide, as do flipped
      // effect directions that put the tool body ahead of the face.
      double start = 0.045, len = 0.11;
      Vec2 mid = xt + e * (start + len / 2.0);
      double lat = sc::kSlotGap / 2.0 + wall_half_thickness;
      for (int s = -1; s <= 1; s += 2) {
        scene.obstacles.push_back(
            {mid + perp * (s * lat), len / 2.0, wall_half_thickness, phi});
      }
      break;
    }
    case TaskKind::pushing: {
      for (int i = -1; i <= 1; ++i) {
        scene.targets.push_back(
            {xt + perp * (i * sc::kPushSpacing), sc::kPushDiskRadius});
      }
      break;
    }
    case TaskKind::reaching: {
      scene.targets.push_back({xt, sc::kReachTargetRadius});
      Vec2 mouth = xt - e * sc::kReachTargetDepth;
      scene.tunnel_mouth = mouth;
      scene.tunnel_len = sc::kTunnelDepth;
      scene.tunnel_gap = sc::kTunnelGap;
      Vec2 mid = mouth + e * (sc::kTunnelDepth / 2.0);
      double lat = sc::kTunnelGap / 2.0 + wall_half_thickness;
      for (int s = -1; s <= 1; s += 2) {
        scene.obstacles.push_back(
            {mid + perp * (s * lat), sc::kTunnelDepth / 2.0,
             wall_half_thickness, phi});
      }
      break;
    }
  }

  scene.tool_start = PlanarPose::make(
      xt.x - 0.45 * e.x + rng.uniform(-0.05, 0.05),
      xt.y - 0.45 * e.y + rng.uniform(-0.05, 0.05), rng.uniform(-kPi, kPi));
  return scene;
}

// ---------------------------------------------------------------------------
// Grasp sampling
// ---------------------------------------------------------------------------

namespace detail {

/// Planar radius queries on a uniform grid (cell size = radius).
class RadiusGrid {
 public:
  RadiusGrid(const std::vector<Vec3>& pts, double radius)
      : pts_(pts), r_(radius) {
    for (std::size_t i = 0; i < pts.size(); ++i) {
      cells_[cell_key(pts[i].xy())].push_back(static_cast<std::uint32_t>(i));
    }
  }

  template <typename Fn>
  void for_neighbors(Vec2 q, Fn&& fn) const {
    std::int64_t qx = coord(q.x), qy = coord(q.y);
    double r2 = r_ * r_;
    for (std::int64_t dx = -1; dx <= 1; ++dx) {
      for (std::int64_t dy = -1; dy <= 1; ++dy) {
        auto it = cells_.find(key(qx + dx, qy + dy));
        if (it == cells_.end()) continue;
        for (std::uint32_t i : it->second) {
          if ((pts_[i].xy() - q).norm2() <= r2) fn(i);
        }
      }
    }
  }

 private:
  std::int64_t coord(double v) const {
    return static_cast<std::int64_t>(std::floor(v / r_));
  }
  std::uint64_t cell_key(Vec2 p) const { return key(coord(p.x), coord(p.y)); }
  static std::uint64_t key(std::int64_t x, std::int64_t y) {
    return (static_cast<std::uint64_t>(x) << 32) ^
           (static_cast<std::uint64_t>(y) & 0xFFFFFFFFull);
  }
  const std::vector<Vec3>& pts_;
  double r_;
  std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> cells_;
};

/// Per-point boundary detection and outward normal estimation from local
/// neighborhood statistics: a point is a boundary point when its
/// neighborhood mean is visibly offset, and the outward normal is the
/// covariance minor axis signed away from the local mass.
struct BoundaryInfo {
  std::vector<bool> boundary;
  std::vector<Vec2> normal;
};

inline BoundaryInfo estimate_boundary(const PointCloud& cloud,
                                      double radius = 0.012) {
  const std::size_t n = cloud.count();
  BoundaryInfo info;
  info.boundary.assign(n, false);
  info.normal.assign(n, Vec2{1.0, 0.0});
  RadiusGrid grid(cloud.points, radius);
  const double offset_threshold = 0.25 * radius;

  for (std::size_t i = 0; i < n; ++i) {
    Vec2 p = cloud.points[i].xy();
    Vec2 mean{};
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    std::size_t count = 0;
    grid.for_neighbors(p, [&](std::uint32_t j) {
      Vec2 q = cloud.points[j].xy();
      mean += q;
      ++count;
    });
    if (count < 3) continue;
    mean = mean / static_cast<double>(count);
    grid.for_neighbors(p, [&](std::uint32_t j) {
      Vec2 d = cloud.points[j].xy() - mean;
      sxx += d.x * d.x;
      sxy += d.x * d.y;
      syy += d.y * d.y;
    });
    Vec2 offset = p - mean;
    if (offset.norm() < offset_threshold) continue;
    info.boundary[i] = true;
    // Minor axis of the neighborhood covariance.
    double theta = 0.5 * std::atan2(2.0 * sxy, sxx - syy);
    Vec2 major{std::cos(theta), std::sin(theta)};
    Vec2 minor = major.perp();
    if (minor.dot(offset) < 0.0) minor = minor * -1.0;
    info.normal[i] = minor;
  }
  return info;
}

/// Validity test for an antipodal boundary pair.
inline bool antipodal_pair_ok(Vec2 pi, Vec2 pj, Vec2 ni, Vec2 nj,
                              double max_width, double* misalign_out) {
  Vec2 axis = pj - pi;
  double width = axis.norm();
  if (width < 0.005 || width > max_width) return false;
  Vec2 d = axis / width;
  // Outward normals must oppose each other within 30 degrees...
  double cos_mis = -(ni.dot(nj));
  if (cos_mis < std::cos(kPi / 6.0)) return false;
  // ...and roughly align with the jaw axis so the pair does not slide.
  if ((-1.0 * d).dot(ni) < std::cos(kPi / 4.0)) return false;
  if (d.dot(nj) < std::cos(kPi / 4.0)) return false;
  if (misalign_out) *misalign_out = std::acos(std::clamp(cos_mis, -1.0, 1.0));
  return true;
}

/// Jaw clearance: the closing jaws approach from beyond each contact point
/// along the pair axis; tool material in either approach zone blocks the
/// grasp (this is what makes a disk wider than the gripper ungraspable).
/// Clearance is only certified when the local sampling density around the
/// contacts is high enough that an empty zone is meaningful; sparse
/// contacts reject the pair.
inline bool pair_has_jaw_clearance(const std::vector<Vec3>& pts, Vec2 pi,
                                   Vec2 pj) {
  const double skin = 0.003;      // contact-point slack
  const double depth = 0.008;     // jaw plate thickness
  const double half_len = 0.006;  // jaw plate half-length
  const double density_r = 0.010;
  Vec2 axis = pj - pi;
  double width = axis.norm();
  Vec2 d = axis / width;
  std::size_t near_i = 0, near_j = 0;
  for (const auto& q : pts) {
    Vec2 rel = q.xy() - pi;
    if (rel.norm2() <= density_r * density_r) ++near_i;
    if ((q.xy() - pj).norm2() <= density_r * density_r) ++near_j;
    double t = d.dot(rel);
    if (t > -depth - skin && t < width + depth + skin) {
      double lat = std::abs(d.cross(rel));
      if (lat > half_len) continue;
      if ((t >= -depth && t <= -skin) ||
          (t >= width + skin && t <= width + depth)) {
        return false;
      }
    }
  }
  // Expected zone occupancy if the zone were inside material.
  const double zone_area = (depth - skin) * 2.0 * half_len;
  const double disc_area = kPi * density_r * density_r;
  double expected_i = static_cast<double>(near_i) * zone_area / disc_area;
  double expected_j = static_cast<double>(near_j) * zone_area / disc_area;
  return expected_i >= 2.0 && expected_j >= 2.0;
}

}  // namespace detail

/// Up to n antipodal top-down grasp candidates, best quality first.
/// Quality combines normal alignment with gripper width margin. Returns an
/// empty list when no valid pair exists (caller treats as grasp failure).
inline std::vector<GraspPose> sample_grasp_candidates(const PointCloud& cloud,
                                                      std::size_t n,
                                                      std::uint64_t seed) {
  namespace sc = scene_constants;
  if (cloud.empty()) fail("empty-cloud", "grasp sampling on empty cloud");
  auto info = detail::estimate_boundary(cloud);
  std::vector<std::size_t> boundary;
  for (std::size_t i = 0; i < cloud.count(); ++i) {
    if (info.boundary[i]) boundary.push_back(i);
  }
  std::vector<GraspPose> out;
  if (boundary.size() < 2) return out;

  Rng rng(mix_seed(seed, 0x475250ull));
  const std::size_t attempts = std::max<std::size_t>(n * 60, 512);
  for (std::size_t a = 0; a < attempts && out.size() < 4 * n; ++a) {
    std::size_t i = boundary[rng.uniform_int(boundary.size())];
    std::size_t j = boundary[rng.uniform_int(boundary.size())];
    if (i == j) continue;
    Vec2 pi = cloud.points[i].xy(), pj = cloud.points[j].xy();
    double misalign = 0.0;
    if (!detail::antipodal_pair_ok(pi, pj, info.normal[i], info.normal[j],
                                   sc::kGripperMaxWidth, &misalign)) {
      continue;
    }
    if (!detail::pair_has_jaw_clearance(cloud.points, pi, pj)) continue;
    GraspPose g;
    g.position = (pi + pj) * 0.5;
    Vec2 axis = (pj - pi).normalized();
    g.theta = wrap_angle(std::atan2(axis.y, axis.x) + kPi / 2.0);
    g.width = (pj - pi).norm();
    g.quality = 0.5 * (1.0 + std::cos(misalign)) *
                std::clamp(1.0 - g.width / sc::kGripperMaxWidth, 0.0, 1.0);
    // Deduplicate by pose.
    bool dup = false;
    for (const auto& other : out) {
      double dth = std::abs(wrap_angle(other.theta - g.theta));
      dth = std::min(dth, kPi - dth);
      if ((other.position - g.position).norm() < 0.005 &&
          dth < kPi / 18.0) {
        dup = true;
        break;
      }
    }
    if (!dup) out.push_back(g);
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const GraspPose& a, const GraspPose& b) {
                     return a.quality > b.quality;
                   });
  if (out.size() > n) out.resize(n);
  return out;
}

/// Exhaustive check that `grasp` matches some feasible antipodal pair on
/// the cloud within tolerance (position 5 mm, angle 10 degrees, modulo the
/// gripper's half-turn symmetry). Deterministic and seed-free.
inline bool grasp_feasible(const PointCloud& cloud, const GraspPose& grasp,
                           double pos_tol = 0.005,
                           double ang_tol = kPi / 18.0) {
  namespace sc = scene_constants;
  if (cloud.empty()) return false;
  auto info = detail::estimate_boundary(cloud);
  std::vector<std::size_t> nearby;
  const double reach = sc::kGripperMaxWidth / 2.0 + pos_tol + 1e-9;
  for (std::size_t i = 0; i < cloud.count(); ++i) {
    if (info.boundary[i] &&
        (cloud.points[i].xy() - grasp.position).norm() <= reach) {
      nearby.push_back(i);
    }
  }
  for (std::size_t a = 0; a < nearby.size(); ++a) {
    for (std::size_t b = a + 1; b < nearby.size(); ++b) {
      std::size_t i = nearby[a], j = nearby[b];
      Vec2 pi = cloud.points[i].xy(), pj = cloud.points[j].xy();
      Vec2 mid = (pi + pj) * 0.5;
      if ((mid - grasp.position).norm() > pos_tol) continue;
      if (!detail::antipodal_pair_ok(pi, pj, info.normal[i], info.normal[j],
                                     sc::kGripperMaxWidth, nullptr)) {
        continue;
      }
      if (!detail::pair_has_jaw_clearance(cloud.points, pi, pj)) continue;
      Vec2 axis = (pj - pi).normalized();
      double theta = wrap_angle(std::atan2(axis.y, axis.x) + kPi / 2.0);
      double dth = std::abs(wrap_angle(theta - grasp.theta));
      dth = std::min(dth, kPi - dth);
      if (dth <= ang_tol) return true;
    }
  }
  return false;
}

// ---------------------------------------------------------------------------
// Episode execution
// ---------------------------------------------------------------------------

/// Executes one episode: verifies the grasp, rigidly places the observed
/// cloud at the action's stand-off pose and sweeps it along e_hat in
/// kSweepSteps increments. Contacted target disks are displaced by the
/// remaining sweep length (the nail's travel saturates at its threshold);
/// any tool point entering an obstacle is a collision. Reaching further
/// requires the in-tunnel sub-cloud to stay thinner than the gap margin.
inline EpisodeOutcome execute(const TaskScene& scene,
                              const PointCloud& tool_cloud,
                              const GraspPose& grasp,
                              const ManipAction& action) {
  namespace sc = scene_constants;
  EpisodeOutcome out;

  if (!grasp.position.finite() || !std::isfinite(grasp.theta) ||
      !action.x_T.finite() || !std::isfinite(action.theta_T) ||
      !std::isfinite(action.drive) || !std::isfinite(action.theta_obs)) {
    fail("invalid-action", "non-finite grasp or action");
  }

  out.grasp_ok = grasp_feasible(tool_cloud, grasp);
  if (!out.grasp_ok) {
    out.diagnostics = "grasp-infeasible";
    return out;
  }

  // Stand-off placement: final pose pulled back along e_hat.
  Vec2 e = scene.env.ehat_unit();
  PlanarPose delta = action_transform(grasp, action);
  PointCloud placed = transform_cloud(tool_cloud, delta, grasp.position);
  const double sweep_len = sc::kStandOff + action.drive;
  std::vector<Vec2> start;
  start.reserve(placed.count());
  for (const auto& p : placed.points) {
    start.push_back(p.xy() - e * sc::kStandOff);
  }

  // Swept contact and collision.
  std::vector<double> contact_t(scene.targets.size(),
                                std::numeric_limits<double>::infinity());
  bool collided = false;
  for (int step = 0; step <= sc::kSweepSteps && !collided; ++step) {
    double t = sweep_len * static_cast<double>(step) / sc::kSweepSteps;
    for (std::size_t i = 0; i < start.size(); ++i) {
      Vec2 pos = start[i] + e * t;
      for (const auto& obs : scene.obstacles) {
        if (obs.contains(pos)) {
          collided = true;
          break;
        }
      }
      if (collided) break;
      for (std::size_t ti = 0; ti < scene.targets.size(); ++ti) {
        if (t >= contact_t[ti]) continue;
        const auto& disk = scene.targets[ti];
        if ((pos - disk.center).norm2() <= disk.radius * disk.radius) {
          contact_t[ti] = t;
        }
      }
    }
  }
  out.collision = collided;

  std::vector<double> displacement(scene.targets.size(), 0.0);
  for (std::size_t ti = 0; ti < scene.targets.size(); ++ti) {
    if (contact_t[ti] <= sweep_len) {
      displacement[ti] = sweep_len - contact_t[ti];
      if (scene.kind == TaskKind::hammering) {
        displacement[ti] = std::min(displacement[ti], scene.threshold);
      }
    }
  }

  bool thin_ok = true;
  if (scene.kind == TaskKind::reaching && !collided) {
    // Perpendicular extent of the tool sub-cloud inside the tunnel at the
    // deepest sweep position.
    Vec2 perp = e.perp();
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < start.size(); ++i) {
      Vec2 pos = start[i] + e * sweep_len;
      double depth = e.dot(pos - scene.tunnel_mouth);
      double lat = perp.dot(pos - scene.tunnel_mouth);
      if (depth >= 0.0 && depth <= scene.tunnel_len &&
          std::abs(lat) <= scene.tunnel_gap / 2.0) {
        lo = std::min(lo, lat);
        hi = std::max(hi, lat);
      }
    }
    if (hi > lo && hi - lo >= scene.tunnel_gap - sc::kThinPartMargin) {
      thin_ok = false;
    }
  }

  bool task_ok = false;
  double binding = 0.0;
  switch (scene.kind) {
    case TaskKind::hammering:
      binding = displacement.empty() ? 0.0 : displacement[0];
      task_ok = binding >= scene.threshold;
      break;
    case TaskKind::pushing: {
      binding = std::numeric_limits<double>::infinity();
      for (double d : displacement) binding = std::min(binding, d);
      if (!std::isfinite(binding)) binding = 0.0;
      task_ok = binding >= scene.threshold;
      break;
    }
    case TaskKind::reaching:
      binding = displacement.empty() ? 0.0 : displacement[0];
      task_ok = binding >= scene.threshold && thin_ok;
      break;
  }
  out.displacement = binding;
  out.success = out.grasp_ok && !out.collision && task_ok;
  if (out.collision) {
    out.diagnostics = "collision";
  } else if (!thin_ok) {
    out.diagnostics = "thin-part-violation";
  } else if (!task_ok) {
    out.diagnostics = "insufficient-displacement";
  } else {
    out.diagnostics = "ok";
  }
  return out;
}

}  // namespace keto

#endif  // KETO_SIMULATOR_HPP
