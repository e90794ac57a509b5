// keto - keypoint-driven tool manipulation lab
//
// Value types shared between the simulator, optimizer and learning stack:
// environment keypoints, task scenes, grasps, actions and episode outcomes.

#ifndef KETO_SIMULATOR_TYPES_HPP
#define KETO_SIMULATOR_TYPES_HPP

#include <string>
#include <vector>

#include "keto/geometry.hpp"

namespace keto {

enum class TaskKind { hammering, pushing, reaching };

inline std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::hammering: return "hammering";
    case TaskKind::pushing: return "pushing";
    case TaskKind::reaching: return "reaching";
  }
  return "hammering";
}

inline TaskKind task_from_string(const std::string& s) {
  if (s == "hammering") return TaskKind::hammering;
  if (s == "pushing") return TaskKind::pushing;
  if (s == "reaching") return TaskKind::reaching;
  fail("parse-error", "unknown task kind: " + s);
}

/// Target point (where the target expects contact) and receiver point; the
/// desired force direction is e_hat = receiver - target.
struct EnvKeypoints {
  Vec2 target;
  Vec2 receiver;

  Vec2 ehat() const { return receiver - target; }
  Vec2 ehat_unit() const { return ehat().normalized(); }
};

/// Static rectangular obstacle, rotated by `angle` about its center.
struct ObstacleBox {
  Vec2 center;
  double half_x = 0.0;
  double half_y = 0.0;
  double angle = 0.0;

  bool contains(Vec2 p) const {
    Vec2 local = (p - center).rotated(-angle);
    return std::abs(local.x) < half_x && std::abs(local.y) < half_y;
  }
};

/// Movable target disk.
struct TargetDisk {
  Vec2 center;
  double radius = 0.01;
};

/// One sampled task instance.
struct TaskScene {
  TaskKind kind = TaskKind::hammering;
  EnvKeypoints env;
  std::vector<ObstacleBox> obstacles;
  std::vector<TargetDisk> targets;
  double threshold = 0.03;  // required displacement along e_hat
  PlanarPose tool_start;
  std::uint64_t seed = 0;

  // Reaching only: tunnel interior description for the thin-part rule.
  // The tunnel runs from `tunnel_mouth` along e_hat for `tunnel_len`.
  Vec2 tunnel_mouth;
  double tunnel_len = 0.0;
  double tunnel_gap = 0.0;
};

/// Top-down parallel-jaw grasp on the tool.
struct GraspPose {
  Vec2 position;       // jaw midpoint in the world frame
  double theta = 0.0;  // gripper orientation (perpendicular to jaw axis)
  double width = 0.0;  // jaw separation at contact
  double quality = 0.0;
};

/// Single-step manipulation: the tool's final placement plus a drive along
/// the desired force direction. theta_obs is the observed keypoint-axis
/// angle the rotation is measured against; it is reconstructed from the
/// stored keypoints when replaying records (persisted actions carry only
/// x_T, theta_T and the drive).
struct ManipAction {
  Vec2 x_T;             // final position of the held (grasp) point
  double theta_T = 0.0;  // final keypoint-axis orientation
  double drive = 0.0;    // sweep past the final pose, along e_hat
  double theta_obs = 0.0;
};

struct EpisodeOutcome {
  bool success = false;
  bool grasp_ok = false;
  bool collision = false;
  double displacement = 0.0;  // binding target displacement along e_hat
  std::string diagnostics;
};

/// Task-scene constants (artifact-level defaults, see make_task).
namespace scene_constants {
inline constexpr double kStandOff = 0.05;       // sweep stand-off distance
inline constexpr int kSweepSteps = 200;         // sweep discretization
inline constexpr double kGripperMaxWidth = 0.08;
inline constexpr double kNailRadius = 0.01;
inline constexpr double kSlotGap = 0.025;
inline constexpr double kDriveNail = 0.03;
inline constexpr double kPushDiskRadius = 0.02;
inline constexpr double kPushSpacing = 0.05;
inline constexpr double kDrivePush = 0.05;
inline constexpr double kTunnelGap = 0.04;
inline constexpr double kTunnelDepth = 0.12;
inline constexpr double kReachTargetDepth = 0.10;
inline constexpr double kReachTargetRadius = 0.015;
inline constexpr double kDriveReach = 0.03;
inline constexpr double kThinPartMargin = 0.005;
}  // namespace scene_constants

inline double task_threshold(TaskKind kind) {
  switch (kind) {
    case TaskKind::hammering: return scene_constants::kDriveNail;
    case TaskKind::pushing: return scene_constants::kDrivePush;
    case TaskKind::reaching: return scene_constants::kDriveReach;
  }
  return 0.03;
}

}  // namespace keto

#endif  // KETO_SIMULATOR_TYPES_HPP
