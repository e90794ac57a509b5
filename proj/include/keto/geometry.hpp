// keto - keypoint-driven tool manipulation lab
//
// Point clouds, planar rigid transforms and the classical geometric
// estimators (Chamfer distance, RANSAC line fitting, Euclidean clustering)
// shared by every other module.

#ifndef KETO_GEOMETRY_HPP
#define KETO_GEOMETRY_HPP

#include <algorithm>
#include <cstdint>
#include <limits>
#include <unordered_map>
#include <vector>

#include "keto/common.hpp"

namespace keto {

// ---------------------------------------------------------------------------
// Core types
// ---------------------------------------------------------------------------

/// Sampled 3D surface points of an object in the world frame.
/// z is height above the table; planar reasoning uses (x, y) only.
struct PointCloud {
  std::vector<Vec3> points;

  std::size_t count() const { return points.size(); }
  bool empty() const { return points.empty(); }

  Vec2 centroid_xy() const {
    Vec2 c{0.0, 0.0};
    for (const auto& p : points) c += p.xy();
    if (!points.empty()) c = c / static_cast<double>(points.size());
    return c;
  }

  /// Max planar distance from `center` to any point.
  double radius_about(Vec2 center) const {
    double r2 = 0.0;
    for (const auto& p : points) r2 = std::max(r2, (p.xy() - center).norm2());
    return std::sqrt(r2);
  }
};

/// SE(2) configuration: translation plus heading, theta in (-pi, pi].
struct PlanarPose {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;

  Vec2 xy() const { return {x, y}; }
  static PlanarPose make(double x, double y, double theta) {
    return {x, y, wrap_angle(theta)};
  }
};

/// Oriented 2D segment with distinct endpoints.
struct Segment2 {
  Vec2 a;
  Vec2 b;

  Vec2 direction() const { return (b - a).normalized(); }
  double length() const { return (b - a).norm(); }

  /// Perpendicular distance from `p` to the infinite line through a, b.
  double line_distance(Vec2 p) const {
    Vec2 d = direction();
    return std::abs(d.cross(p - a));
  }

  /// Scalar coordinate of the projection of `p` onto the line (a = 0).
  double project(Vec2 p) const { return direction().dot(p - a); }

  Vec2 point_at(double t) const { return a + direction() * t; }
};

// ---------------------------------------------------------------------------
// Exact nearest-neighbor grid
// ---------------------------------------------------------------------------

namespace detail {

/// Uniform hash grid over the (x, y) projection delivering exact nearest
/// neighbors in 3D: ring search stops once the ring's planar lower bound
/// exceeds the best 3D distance found.
class NearestGrid {
 public:
  explicit NearestGrid(const std::vector<Vec3>& pts, double cell = 0.01)
      : pts_(pts), cell_(cell) {
    for (std::size_t i = 0; i < pts.size(); ++i) {
      std::int64_t x = cx(pts[i].x), y = cy(pts[i].y);
      min_x_ = std::min(min_x_, x);
      max_x_ = std::max(max_x_, x);
      min_y_ = std::min(min_y_, y);
      max_y_ = std::max(max_y_, y);
      cells_[key(x, y)].push_back(static_cast<std::uint32_t>(i));
    }
  }

  /// Index of the point nearest to q (3D distance), with squared distance.
  /// Exact: ring expansion stops only when the planar lower bound of the
  /// next ring exceeds the best 3D distance so far.
  std::pair<std::size_t, double> nearest(const Vec3& q) const {
    std::size_t best = 0;
    double best_d2 = std::numeric_limits<double>::infinity();
    const std::int64_t qx = cx(q.x), qy = cy(q.y);
    const std::int64_t span =
        std::max({qx - min_x_, max_x_ - qx, qy - min_y_, max_y_ - qy,
                  std::int64_t{0}});
    for (std::int64_t ring = 0; ring <= span; ++ring) {
      if (ring > 1 && best_d2 < std::numeric_limits<double>::infinity()) {
        double lb = (static_cast<double>(ring) - 1.0) * cell_;
        if (lb * lb > best_d2) break;
      }
      for (std::int64_t dx = -ring; dx <= ring; ++dx) {
        for (std::int64_t dy = -ring; dy <= ring; ++dy) {
          if (std::max(std::abs(dx), std::abs(dy)) != ring) continue;
          auto it = cells_.find(key(qx + dx, qy + dy));
          if (it == cells_.end()) continue;
          for (std::uint32_t i : it->second) {
            double d2 = distance2(pts_[i], q);
            if (d2 < best_d2) {
              best_d2 = d2;
              best = i;
            }
          }
        }
      }
    }
    return {best, best_d2};
  }

 private:
  static std::int64_t floordiv(double v, double cell) {
    return static_cast<std::int64_t>(std::floor(v / cell));
  }
  std::int64_t cx(double x) const { return floordiv(x, cell_); }
  std::int64_t cy(double y) const { return floordiv(y, cell_); }
  static std::uint64_t key(std::int64_t x, std::int64_t y) {
    return (static_cast<std::uint64_t>(x) << 32) ^
           (static_cast<std::uint64_t>(y) & 0xFFFFFFFFull);
  }

  const std::vector<Vec3>& pts_;
  double cell_;
  std::int64_t min_x_ = std::numeric_limits<std::int64_t>::max();
  std::int64_t max_x_ = std::numeric_limits<std::int64_t>::min();
  std::int64_t min_y_ = std::numeric_limits<std::int64_t>::max();
  std::int64_t max_y_ = std::numeric_limits<std::int64_t>::min();
  std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> cells_;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Draws exactly m points uniformly with replacement. Deterministic in seed.
inline PointCloud sample_points(const PointCloud& cloud, std::size_t m,
                                std::uint64_t seed) {
  if (cloud.empty()) fail("empty-cloud", "sample_points on empty cloud");
  Rng rng(mix_seed(seed, 0x5A4D50ull));
  PointCloud out;
  out.points.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    out.points.push_back(cloud.points[rng.uniform_int(cloud.count())]);
  }
  return out;
}

/// Symmetric Chamfer distance: mean squared nearest-neighbor distance from
/// a to b plus the reverse term. Zero iff the clouds coincide pointwise.
inline double chamfer_distance(const PointCloud& a, const PointCloud& b) {
  if (a.empty() || b.empty()) fail("empty-cloud", "chamfer on empty cloud");
  auto one_sided = [](const PointCloud& from, const PointCloud& to) {
    detail::NearestGrid grid(to.points);
    double sum = 0.0;
    for (const auto& p : from.points) sum += grid.nearest(p).second;
    return sum / static_cast<double>(from.count());
  };
  return one_sided(a, b) + one_sided(b, a);
}

/// Rotates the (x, y) of every point by pose_delta.theta about `pivot`,
/// then translates by (pose_delta.x, pose_delta.y). z is untouched.
inline PointCloud transform_cloud(const PointCloud& cloud,
                                  const PlanarPose& pose_delta, Vec2 pivot) {
  PointCloud out;
  out.points.reserve(cloud.count());
  double c = std::cos(pose_delta.theta), s = std::sin(pose_delta.theta);
  for (const auto& p : cloud.points) {
    double dx = p.x - pivot.x, dy = p.y - pivot.y;
    out.points.push_back({pivot.x + c * dx - s * dy + pose_delta.x,
                          pivot.y + s * dx + c * dy + pose_delta.y, p.z});
  }
  return out;
}

struct RansacLineResult {
  Segment2 segment;
  std::vector<std::size_t> inliers;
};

/// 2-point-hypothesis RANSAC line fit with a fixed iteration budget.
/// Ties in inlier count go to the earliest iteration; the segment spans the
/// extreme inlier projections. Deterministic in seed.
inline RansacLineResult ransac_line(const std::vector<Vec2>& points,
                                    int iterations, double inlier_tol,
                                    std::uint64_t seed) {
  if (points.size() < 2) fail("degenerate-input", "ransac_line needs 2 points");
  Rng rng(mix_seed(seed, 0x52414Eull));

  std::size_t best_count = 0;
  Vec2 best_a{}, best_d{};
  const std::size_t n = points.size();

  for (int it = 0; it < iterations; ++it) {
    std::size_t i = rng.uniform_int(n);
    std::size_t j = rng.uniform_int(n);
    if (i == j) continue;
    Vec2 d = points[j] - points[i];
    double len = d.norm();
    if (len < 1e-12) continue;
    d = d / len;
    std::size_t count = 0;
    for (const auto& p : points) {
      if (std::abs(d.cross(p - points[i])) <= inlier_tol) ++count;
    }
    if (count > best_count) {
      best_count = count;
      best_a = points[i];
      best_d = d;
    }
  }
  if (best_count == 0) {
    fail("degenerate-input", "ransac_line found no valid hypothesis");
  }

  RansacLineResult out;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < n; ++k) {
    if (std::abs(best_d.cross(points[k] - best_a)) <= inlier_tol) {
      out.inliers.push_back(k);
      double t = best_d.dot(points[k] - best_a);
      lo = std::min(lo, t);
      hi = std::max(hi, t);
    }
  }
  out.segment.a = best_a + best_d * lo;
  out.segment.b = best_a + best_d * hi;
  return out;
}

/// Connected components of the radius-neighborhood graph. Components with
/// fewer than min_points members are dropped; output is ordered by
/// descending size, ties by smallest contained index.
inline std::vector<std::vector<std::size_t>> euclidean_cluster(
    const std::vector<Vec2>& points, double radius, std::size_t min_points) {
  const std::size_t n = points.size();
  const double r2 = radius * radius;
  std::vector<int> label(n, -1);
  std::vector<std::vector<std::size_t>> clusters;

  std::vector<std::size_t> stack;
  for (std::size_t s = 0; s < n; ++s) {
    if (label[s] >= 0) continue;
    int id = static_cast<int>(clusters.size());
    clusters.emplace_back();
    label[s] = id;
    stack.assign(1, s);
    while (!stack.empty()) {
      std::size_t u = stack.back();
      stack.pop_back();
      clusters[id].push_back(u);
      for (std::size_t v = 0; v < n; ++v) {
        if (label[v] >= 0) continue;
        if ((points[u] - points[v]).norm2() <= r2) {
          label[v] = id;
          stack.push_back(v);
        }
      }
    }
  }

  std::erase_if(clusters, [&](const std::vector<std::size_t>& c) {
    return c.size() < min_points;
  });
  for (auto& c : clusters) std::sort(c.begin(), c.end());
  std::stable_sort(clusters.begin(), clusters.end(),
                   [](const auto& a, const auto& b) {
                     if (a.size() != b.size()) return a.size() > b.size();
                     return a.front() < b.front();
                   });
  return clusters;
}

/// Index of the cloud point nearest to q in the plane.
inline std::size_t nearest_point_xy(const PointCloud& cloud, Vec2 q) {
  if (cloud.empty()) fail("empty-cloud", "nearest_point_xy on empty cloud");
  std::size_t best = 0;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < cloud.count(); ++i) {
    double d2 = (cloud.points[i].xy() - q).norm2();
    if (d2 < best_d2) {
      best_d2 = d2;
      best = i;
    }
  }
  return best;
}

}  // namespace keto

#endif  // KETO_GEOMETRY_HPP
