// keto - keypoint-driven tool manipulation lab
//
// Action optimization: builds the 4-variable quadratic program over
// z = [x_g, y_g, x_f, y_f] that trades off function-point placement against
// force-direction alignment, solves it with a primal active-set method, and
// recovers a rigid final pose plus the grasp selection rule.

#ifndef KETO_OPTIMIZER_HPP
#define KETO_OPTIMIZER_HPP

#include <array>
#include <cstdio>
#include <string>
#include <vector>

#include "keto/geometry.hpp"
#include "keto/keypoints.hpp"
#include "keto/simulator_types.hpp"

namespace keto {

// ---------------------------------------------------------------------------
// Problem data
// ---------------------------------------------------------------------------

/// Desired force direction (alpha, beta) = x_r - x_t together with gamma,
/// the signed angle from (x_g - x_f) to the tool's effect direction e,
/// measured in the observed tool frame.
struct ForceSpec {
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 0.0;
};

/// Which linearization of the alignment reward to use. The printed form
/// reproduces the published coefficient table; the rotation form is derived
/// from the plane-rotation identity and is the one that satisfies
/// v . z = e_hat . R(gamma) (x_g - x_f).
enum class VForm { rotation, printed };

/// v such that v . z rewards alignment of the rotated grasp-to-function
/// axis with the desired force direction.
inline std::array<double, 4> compute_v(const ForceSpec& spec,
                                       VForm form = VForm::rotation) {
  double c = std::cos(spec.gamma), s = std::sin(spec.gamma);
  double a = spec.alpha, b = spec.beta;
  if (form == VForm::printed) {
    return {a * c + b * s, -b * s + b * c, -a * c - b * s, b * s - b * c};
  }
  return {a * c + b * s, -a * s + b * c, -a * c - b * s, a * s - b * c};
}

/// min z^T Q z + b^T z  subject to  H z >= eps.
struct QPProblem {
  std::array<std::array<double, 4>, 4> Q{};
  std::array<double, 4> b{};
  std::vector<std::array<double, 4>> H;
  std::vector<double> eps;

  double objective(const std::array<double, 4>& z) const {
    double f = 0.0;
    for (int i = 0; i < 4; ++i) {
      f += b[i] * z[i];
      for (int j = 0; j < 4; ++j) f += z[i] * Q[i][j] * z[j];
    }
    return f;
  }

  bool feasible(const std::array<double, 4>& z, double tol = 1e-9) const {
    for (std::size_t r = 0; r < H.size(); ++r) {
      double hz = 0.0;
      for (int i = 0; i < 4; ++i) hz += H[r][i] * z[i];
      if (hz < eps[r] - tol) return false;
    }
    return true;
  }
};

struct QPSolution {
  std::array<double, 4> z{};
  double objective = 0.0;
  std::vector<std::size_t> active;
  double kkt_residual = 0.0;

  Vec2 grasp() const { return {z[0], z[1]}; }
  Vec2 function() const { return {z[2], z[3]}; }
};

/// Axis-aligned workspace bounds for the grasp-point variables.
struct WorkspaceBox {
  double x_lo = -0.5, x_hi = 0.5;
  double y_lo = -0.5, y_hi = 0.5;

  bool valid() const { return x_lo < x_hi && y_lo < y_hi; }
};

// ---------------------------------------------------------------------------
// Problem construction
// ---------------------------------------------------------------------------

/// Signed CCW angle from (x_g - x_f) to e = x_e - x_f, in the observed
/// tool frame. Rigid-motion invariant.
inline double keypoint_gamma(const ToolKeypoints& k) {
  Vec2 axis = k.x_g - k.x_f;
  Vec2 e = k.x_e - k.x_f;
  return std::atan2(axis.cross(e), axis.dot(e));
}

/// Assembles the quadratic program from tool and environment keypoints.
/// Constraint rows: grasp point inside `workspace`, function point inside
/// the box of half-width 0.1 m centered on the target point.
inline QPProblem build_qp(const ToolKeypoints& k, const EnvKeypoints& env,
                          const WorkspaceBox& workspace,
                          VForm form = VForm::rotation) {
  if (!workspace.valid()) {
    fail("infeasible-constraints", "degenerate workspace box");
  }
  ForceSpec spec;
  Vec2 ehat = env.receiver - env.target;
  spec.alpha = ehat.x;
  spec.beta = ehat.y;
  spec.gamma = keypoint_gamma(k);

  QPProblem p;
  p.Q = {{{1, 0, -1, 0}, {0, 1, 0, -1}, {-1, 0, 2, 0}, {0, -1, 0, 2}}};
  auto v = compute_v(spec, form);
  p.b = {-v[0], -v[1], -v[2] - 2.0 * env.target.x, -v[3] - 2.0 * env.target.y};

  const double fh = 0.1;  // function-point box half-width around the target
  auto add_bound = [&p](int var, double lo, double hi) {
    std::array<double, 4> row{};
    row[var] = 1.0;
    p.H.push_back(row);
    p.eps.push_back(lo);
    row[var] = -1.0;
    p.H.push_back(row);
    p.eps.push_back(-hi);
  };
  add_bound(0, workspace.x_lo, workspace.x_hi);
  add_bound(1, workspace.y_lo, workspace.y_hi);
  add_bound(2, env.target.x - fh, env.target.x + fh);
  add_bound(3, env.target.y - fh, env.target.y + fh);
  return p;
}

// ---------------------------------------------------------------------------
// Solver
// ---------------------------------------------------------------------------

namespace detail {

/// Gaussian elimination with partial pivoting for n <= 8 systems.
inline bool solve_dense(std::vector<std::vector<double>>& A,
                        std::vector<double>& rhs) {
  const std::size_t n = rhs.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::abs(A[r][col]) > std::abs(A[piv][col])) piv = r;
    }
    if (std::abs(A[piv][col]) < 1e-14) return false;
    std::swap(A[piv], A[col]);
    std::swap(rhs[piv], rhs[col]);
    for (std::size_t r = col + 1; r < n; ++r) {
      double f = A[r][col] / A[col][col];
      if (f == 0.0) continue;
      for (std::size_t c = col; c < n; ++c) A[r][c] -= f * A[col][c];
      rhs[r] -= f * rhs[col];
    }
  }
  for (std::size_t i = n; i-- > 0;) {
    double s = rhs[i];
    for (std::size_t c = i + 1; c < n; ++c) s -= A[i][c] * rhs[c];
    rhs[i] = s / A[i][i];
  }
  return true;
}

/// A feasible start for box-structured rows (each row touches one
/// variable): midpoint of every variable's [lo, hi] interval.
inline bool box_start(const QPProblem& p, std::array<double, 4>& z) {
  std::array<double, 4> lov, hiv;
  lov.fill(-1e18);
  hiv.fill(1e18);
  for (std::size_t r = 0; r < p.H.size(); ++r) {
    int var = -1;
    double coef = 0.0;
    for (int i = 0; i < 4; ++i) {
      if (p.H[r][i] != 0.0) {
        if (var >= 0) return false;  // not a box row
        var = i;
        coef = p.H[r][i];
      }
    }
    if (var < 0) return false;
    double bound = p.eps[r] / coef;
    if (coef > 0.0) {
      lov[var] = std::max(lov[var], bound);
    } else {
      hiv[var] = std::min(hiv[var], bound);
    }
  }
  for (int i = 0; i < 4; ++i) {
    if (lov[i] > hiv[i]) fail("infeasible-constraints", "empty box");
    double l = lov[i] > -1e17 ? lov[i] : (hiv[i] < 1e17 ? hiv[i] - 1.0 : 0.0);
    double h = hiv[i] < 1e17 ? hiv[i] : (lov[i] > -1e17 ? lov[i] + 1.0 : 0.0);
    z[i] = 0.5 * (l + h);
  }
  return true;
}

}  // namespace detail

/// Exact global minimizer of a strictly convex 4-variable QP via a primal
/// active-set method. Errors: "infeasible-constraints" when no feasible
/// point exists, "solver-stalled" after 100 iterations (a bug signal for
/// box-structured constraints).
inline QPSolution solve_qp(const QPProblem& p) {
  std::array<double, 4> z{};
  if (!detail::box_start(p, z)) {
    // General rows: fall back to the unconstrained optimum if feasible.
    std::vector<std::vector<double>> A(4, std::vector<double>(4));
    std::vector<double> rhs(4);
    for (int i = 0; i < 4; ++i) {
      rhs[i] = -p.b[i];
      for (int j = 0; j < 4; ++j) A[i][j] = p.Q[i][j] + p.Q[j][i];
    }
    if (!detail::solve_dense(A, rhs)) fail("solver-stalled", "singular Q");
    for (int i = 0; i < 4; ++i) z[i] = rhs[i];
    if (!p.feasible(z)) {
      fail("infeasible-constraints",
           "no feasible start for non-box constraint rows");
    }
  }

  const std::size_t m = p.H.size();
  std::vector<bool> active(m, false);
  // Activate rows tight at the start.
  auto row_value = [&p](std::size_t r, const std::array<double, 4>& zz) {
    double hz = 0.0;
    for (int i = 0; i < 4; ++i) hz += p.H[r][i] * zz[i];
    return hz;
  };
  for (std::size_t r = 0; r < m; ++r) {
    if (std::abs(row_value(r, z) - p.eps[r]) < 1e-12) active[r] = true;
  }

  std::vector<double> lambda(m, 0.0);
  for (int iter = 0; iter < 100; ++iter) {
    std::vector<std::size_t> work;
    for (std::size_t r = 0; r < m; ++r) {
      if (active[r]) work.push_back(r);
    }
    const std::size_t k = work.size();
    const std::size_t n = 4 + k;

    // KKT system for the equality-constrained step:
    //   [2Q  A^T][d     ]   [-(2Qz + b)]
    //   [A    0 ][lambda] = [0         ]
    std::vector<std::vector<double>> A(n, std::vector<double>(n, 0.0));
    std::vector<double> rhs(n, 0.0);
    std::array<double, 4> grad{};
    for (int i = 0; i < 4; ++i) {
      grad[i] = p.b[i];
      for (int j = 0; j < 4; ++j) {
        grad[i] += (p.Q[i][j] + p.Q[j][i]) * z[j];
        A[i][j] = p.Q[i][j] + p.Q[j][i];
      }
      rhs[i] = -grad[i];
    }
    for (std::size_t w = 0; w < k; ++w) {
      for (int i = 0; i < 4; ++i) {
        A[i][4 + w] = -p.H[work[w]][i];
        A[4 + w][i] = p.H[work[w]][i];
      }
    }
    if (!detail::solve_dense(A, rhs)) {
      // Degenerate working set; drop the most recently added row.
      if (!work.empty()) {
        active[work.back()] = false;
        continue;
      }
      fail("solver-stalled", "singular KKT system");
    }

    std::array<double, 4> d{rhs[0], rhs[1], rhs[2], rhs[3]};
    double dn = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2] + d[3] * d[3]);

    if (dn <= 1e-11) {
      // Stationary on the working set; check multiplier signs.
      std::fill(lambda.begin(), lambda.end(), 0.0);
      double min_l = 0.0;
      std::size_t drop = m;
      for (std::size_t w = 0; w < k; ++w) {
        lambda[work[w]] = rhs[4 + w];
        if (rhs[4 + w] < min_l) {
          min_l = rhs[4 + w];
          drop = work[w];
        }
      }
      if (drop == m || min_l > -1e-11) {
        QPSolution sol;
        sol.z = z;
        sol.objective = p.objective(z);
        for (std::size_t r = 0; r < m; ++r) {
          if (active[r]) sol.active.push_back(r);
        }
        // Stationarity residual of the full KKT system.
        double res = 0.0;
        for (int i = 0; i < 4; ++i) {
          double g = p.b[i];
          for (int j = 0; j < 4; ++j) g += (p.Q[i][j] + p.Q[j][i]) * z[j];
          for (std::size_t r = 0; r < m; ++r) g -= lambda[r] * p.H[r][i];
          res = std::max(res, std::abs(g));
        }
        sol.kkt_residual = res;
        return sol;
      }
      active[drop] = false;
      continue;
    }

    // Largest feasible step along d; add the blocking row if step < 1.
    double step = 1.0;
    std::size_t blocker = m;
    for (std::size_t r = 0; r < m; ++r) {
      if (active[r]) continue;
      double hd = 0.0;
      for (int i = 0; i < 4; ++i) hd += p.H[r][i] * d[i];
      if (hd >= -1e-14) continue;
      double room = row_value(r, z) - p.eps[r];
      double t = room / (-hd);
      if (t < step) {
        step = t;
        blocker = r;
      }
    }
    for (int i = 0; i < 4; ++i) z[i] += step * d[i];
    if (blocker != m) active[blocker] = true;
  }
  fail("solver-stalled", "active-set iteration limit reached");
}

// ---------------------------------------------------------------------------
// Pose recovery and grasp selection
// ---------------------------------------------------------------------------

enum class AnchorMode { function_point, grasp_point };

/// Converts the QP minimizer into a rigid final pose. theta_T is the angle
/// of the solved grasp-to-function axis. In function_point mode the tool is
/// placed so its function keypoint lands on the solved function point and
/// x_T is the resulting position of the held point; in grasp_point mode the
/// held point goes to the solved grasp point directly.
///
/// `observed` is the tool's observed pose: position = the held (grasp)
/// point on the observed cloud, theta = angle of (x_f - x_g) as observed.
/// `task_threshold` is the scene's success distance; drive defaults to
/// threshold + 0.02 m.
inline ManipAction recover_action(const QPSolution& sol, const ToolKeypoints& k,
                                  const PlanarPose& observed,
                                  double task_threshold,
                                  AnchorMode mode = AnchorMode::function_point) {
  Vec2 g{sol.z[0], sol.z[1]};
  Vec2 f{sol.z[2], sol.z[3]};
  Vec2 axis = f - g;
  if (axis.norm() < 1e-6) {
    fail("degenerate-orientation", "solved keypoints coincide");
  }
  ManipAction a;
  a.theta_T = std::atan2(axis.y, axis.x);
  a.theta_obs = observed.theta;
  double dtheta = a.theta_T - observed.theta;
  if (mode == AnchorMode::function_point) {
    // Rigidly map the observed function keypoint onto f.
    Vec2 held = observed.xy();
    a.x_T = f + (held - k.x_f).rotated(dtheta);
  } else {
    a.x_T = g;
  }
  a.drive = task_threshold + 0.02;
  return a;
}

/// Rigid map taking observed-cloud coordinates to final-pose coordinates,
/// as executed: rotation by (theta_T - theta_obs) about the held point.
inline PlanarPose action_transform(const GraspPose& grasp,
                                   const ManipAction& action) {
  double dtheta = action.theta_T - action.theta_obs;
  // p -> R(p - g0) + x_T, expressed as rotate-about-pivot + translation.
  return PlanarPose{action.x_T.x - grasp.position.x,
                    action.x_T.y - grasp.position.y, wrap_angle(dtheta)};
}

/// The grasp candidate spatially closest to the grasp keypoint. Ties break
/// toward higher quality, then list order.
inline GraspPose select_grasp(const std::vector<GraspPose>& candidates,
                              const ToolKeypoints& k) {
  if (candidates.empty()) fail("no-grasp", "no grasp candidates");
  std::size_t best = 0;
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    double di = (candidates[i].position - k.x_g).norm();
    double db = (candidates[best].position - k.x_g).norm();
    if (di < db || (di == db && candidates[i].quality > candidates[best].quality)) {
      best = i;
    }
  }
  return candidates[best];
}

/// Plain-text dump (row-major, 17 significant digits) for cross-checking
/// against other implementations.
inline std::string dump_qp(const QPProblem& p) {
  auto num = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  std::string out = "Q\n";
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) out += num(p.Q[i][j]) + (j == 3 ? "\n" : " ");
  }
  out += "b\n";
  for (int i = 0; i < 4; ++i) out += num(p.b[i]) + (i == 3 ? "\n" : " ");
  out += "H\n";
  for (std::size_t r = 0; r < p.H.size(); ++r) {
    for (int j = 0; j < 4; ++j) out += num(p.H[r][j]) + (j == 3 ? "\n" : " ");
  }
  out += "eps\n";
  for (std::size_t r = 0; r < p.eps.size(); ++r) {
    out += num(p.eps[r]) + (r + 1 == p.eps.size() ? "\n" : " ");
  }
  return out;
}

}  // namespace keto

#endif  // KETO_OPTIMIZER_HPP
