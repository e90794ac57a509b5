// keto - keypoint-driven tool manipulation lab
//
// Inverse keypoint problem: compose a new tool from rigid point-cloud
// parts by gradient ascent of the evaluation network's score with respect
// to each part's planar translation and rotation. The score gradient flows
// through the cloud canonicalization (centroid, PCA angle, scale), which
// makes the score of a single-part assembly exactly invariant to its own
// rotation - relative part placement is what the ascent optimizes.

#ifndef KETO_CREATOR_HPP
#define KETO_CREATOR_HPP

#include <vector>

#include "keto/learner.hpp"

namespace keto {

/// Planar placement of one part: translation plus rotation about the
/// part's own centroid.
struct PartPose {
  double tx = 0.0;
  double ty = 0.0;
  double phi = 0.0;
};

struct CreationOptions {
  int max_iters = 80;
  double step = 0.02;
  double tol = 1e-4;
};

struct CreationResult {
  std::vector<PartPose> poses;
  std::vector<double> score_trajectory;           // score after each accepted step
  std::vector<std::vector<PartPose>> pose_history;  // one entry per accepted step
  PointCloud assembled;
  bool converged = false;
};

/// Rigidly places each part (rotation about its own centroid, then
/// translation) and concatenates the clouds, preserving per-part counts
/// and order.
inline PointCloud assemble(const std::vector<PointCloud>& parts,
                           const std::vector<PartPose>& poses) {
  if (parts.size() != poses.size()) {
    fail("bad-parts", "parts/poses length mismatch");
  }
  PointCloud out;
  std::size_t total = 0;
  for (const auto& p : parts) total += p.count();
  out.points.reserve(total);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    Vec2 c = parts[i].centroid_xy();
    double cs = std::cos(poses[i].phi), sn = std::sin(poses[i].phi);
    for (const auto& p : parts[i].points) {
      double dx = p.x - c.x, dy = p.y - c.y;
      out.points.push_back({c.x + cs * dx - sn * dy + poses[i].tx,
                            c.y + sn * dx + cs * dy + poses[i].ty, p.z});
    }
  }
  return out;
}

/// Evaluation score of the assembled cloud against the desired keypoints.
/// The desired keypoints are expressed in the canonical (normalized) frame
/// - the same coordinates the evaluation head was trained on - and stay
/// fixed there while the cloud's normalization is recomputed as the parts
/// move. Rigid motions of the whole assembly therefore leave the score
/// unchanged; only relative part placement matters.
inline double creation_score(const std::vector<PointCloud>& parts,
                             const std::vector<PartPose>& poses,
                             const ToolKeypoints& desired,
                             const EvalNet<double>& net) {
  PointCloud cloud = assemble(parts, poses);
  CanonFrame frame = compute_frame(cloud);
  auto pts = canonical_points<double>(cloud, frame);
  std::array<double, 6> kp{desired.x_g.x, desired.x_g.y, desired.x_f.x,
                           desired.x_f.y, desired.x_e.x, desired.x_e.y};
  return eval_score_with_input_grad<double>(net, pts, kp, nullptr, nullptr);
}

/// Reverse-mode gradient of creation_score with respect to every pose
/// field. The chain runs through the network, the canonicalization
/// (centroid, PCA angle and max-radius scale) and the rigid placement.
inline std::vector<PartPose> creation_gradient(
    const std::vector<PointCloud>& parts, const std::vector<PartPose>& poses,
    const ToolKeypoints& desired, const EvalNet<double>& net,
    double* score_out = nullptr) {
  if (parts.size() != poses.size()) {
    fail("bad-parts", "parts/poses length mismatch");
  }
  PointCloud cloud = assemble(parts, poses);
  const std::size_t n = cloud.count();
  CanonFrame frame = compute_frame(cloud);
  auto sample = net_subsample_indices(n);
  auto pts = canonical_points<double>(cloud, frame);
  std::array<double, 6> kp{desired.x_g.x, desired.x_g.y, desired.x_f.x,
                           desired.x_f.y, desired.x_e.x, desired.x_e.y};

  std::vector<double> dpts;
  double score = eval_score_with_input_grad<double>(net, pts, kp, &dpts, nullptr);
  if (score_out) *score_out = score;

  const double s = frame.scale;
  const Vec2 c = frame.centroid;
  const double ca = std::cos(frame.angle), sa = std::sin(frame.angle);
  // M = R(-a); M^T g rotates a canonical gradient back to world axes.
  auto m_t = [&](Vec2 g) {
    return Vec2{ca * g.x - sa * g.y, sa * g.x + ca * g.y};
  };

  // Direct per-point terms plus the accumulators for the frame terms.
  std::vector<Vec2> dworld(n, Vec2{});
  Vec2 sum_gq{};   // sum of canonical xy gradients (points + keypoints)
  double g_a = 0.0;  // dL/d(angle)
  double g_s = 0.0;  // dL/d(scale)
  for (std::size_t occ = 0; occ < sample.size(); ++occ) {
    std::size_t k = sample[occ];
    Vec2 gq{dpts[occ * 3 + 0], dpts[occ * 3 + 1]};
    double gz = dpts[occ * 3 + 2];
    dworld[k] += m_t(gq) / s;
    sum_gq += gq;
    Vec2 q{pts[occ * 3 + 0], pts[occ * 3 + 1]};
    double qz = pts[occ * 3 + 2];
    // dq/da = -M J u / s = -J_c q where J_c rotates the canonical vector.
    g_a += gq.x * q.y - gq.y * q.x;  // gq . (-J q)
    g_s += -(gq.dot(q) + gz * qz) / s;
  }
  const Vec2 g_c = m_t(sum_gq) * (-1.0 / s);

  // Scatter the centroid term.
  for (std::size_t k = 0; k < n; ++k) {
    dworld[k] += g_c / static_cast<double>(n);
  }

  // Angle term: a = 0.5 atan2(2 sxy, sxx - syy) (+ discrete flip).
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (const auto& p : cloud.points) {
    Vec2 d = p.xy() - c;
    sxx += d.x * d.x;
    sxy += d.x * d.y;
    syy += d.y * d.y;
  }
  double u = 2.0 * sxy, w = sxx - syy;
  double denom = u * u + w * w;
  if (denom > 1e-18) {
    for (std::size_t k = 0; k < n; ++k) {
      Vec2 d = cloud.points[k].xy() - c;
      double dax = (w * d.y - u * d.x) / denom;
      double day = (w * d.x + u * d.y) / denom;
      dworld[k] += Vec2{dax, day} * g_a;
    }
  }

  // Scale term: s = max_m |p_m - c|, subgradient at the argmax point.
  std::size_t arg = 0;
  double best = -1.0;
  for (std::size_t k = 0; k < n; ++k) {
    double d2 = (cloud.points[k].xy() - c).norm2();
    if (d2 > best) {
      best = d2;
      arg = k;
    }
  }
  Vec2 uhat = (cloud.points[arg].xy() - c) / std::max(std::sqrt(best), 1e-12);
  dworld[arg] += uhat * g_s;
  for (std::size_t k = 0; k < n; ++k) {
    dworld[k] -= uhat * (g_s / static_cast<double>(n));
  }

  // Rigid placement chain per part.
  std::vector<PartPose> grad(parts.size());
  std::size_t base = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    Vec2 pc = parts[i].centroid_xy();
    double cs = std::cos(poses[i].phi + kPi / 2.0);
    double sn = std::sin(poses[i].phi + kPi / 2.0);
    for (std::size_t j = 0; j < parts[i].count(); ++j) {
      Vec2 g = dworld[base + j];
      grad[i].tx += g.x;
      grad[i].ty += g.y;
      double lx = parts[i].points[j].x - pc.x;
      double ly = parts[i].points[j].y - pc.y;
      grad[i].phi += g.x * (cs * lx - sn * ly) + g.y * (sn * lx + cs * ly);
    }
    base += parts[i].count();
  }
  return grad;
}

/// Backtracking-line-search gradient ascent on the evaluation score. The
/// accepted-step score trajectory is strictly increasing; `converged` is
/// set only when the gradient norm dropped below tol.
inline CreationResult create_tool(const std::vector<PointCloud>& parts,
                                  const ToolKeypoints& desired,
                                  const NetParams& eval_params,
                                  const CreationOptions& opts = {},
                                  std::vector<PartPose> initial = {}) {
  if (parts.empty()) fail("bad-parts", "need at least one part");
  auto net = eval_from_params<double>(eval_params);
  CreationResult result;
  result.poses = initial.empty() ? std::vector<PartPose>(parts.size())
                                 : std::move(initial);
  if (result.poses.size() != parts.size()) {
    fail("bad-parts", "initial poses length mismatch");
  }

  double score = creation_score(parts, result.poses, desired, net);
  if (!std::isfinite(score)) fail("diverged", "initial score is not finite");
  result.score_trajectory.push_back(score);

  for (int iter = 0; iter < opts.max_iters; ++iter) {
    auto grad = creation_gradient(parts, result.poses, desired, net);
    double gnorm = 0.0;
    for (const auto& g : grad) {
      gnorm += g.tx * g.tx + g.ty * g.ty + g.phi * g.phi;
    }
    gnorm = std::sqrt(gnorm);
    if (gnorm <= opts.tol) {
      result.converged = true;
      break;
    }

    double step = opts.step;
    bool accepted = false;
    for (int halving = 0; halving < 20; ++halving) {
      std::vector<PartPose> cand = result.poses;
      for (std::size_t i = 0; i < cand.size(); ++i) {
        cand[i].tx += step * grad[i].tx;
        cand[i].ty += step * grad[i].ty;
        cand[i].phi += step * grad[i].phi;
      }
      double cand_score = creation_score(parts, cand, desired, net);
      if (!std::isfinite(cand_score)) fail("diverged", "score became NaN");
      if (cand_score > score) {
        result.poses = std::move(cand);
        score = cand_score;
        result.score_trajectory.push_back(score);
        result.pose_history.push_back(result.poses);
        accepted = true;
        break;
      }
      step /= 2.0;
    }
    if (!accepted) break;  // local maximum at line-search resolution
  }
  result.assembled = assemble(parts, result.poses);
  return result;
}

}  // namespace keto

#endif  // KETO_CREATOR_HPP
