#include "anchorlab/sim/expert.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "anchorlab/common/errors.hpp"

namespace anchorlab::sim {
namespace {

// Close/open once the gripper is this close to its goal.
constexpr double kArriveTolerance = 0.01;

bool in_workspace(double x, double y) { return x >= 0.0 && x <= 1.0 && y >= 0.0 && y <= 1.0; }

Action move_towards(const Pose& from, double tx, double ty, double g) {
  Action a;
  a.dx = std::clamp(tx - from.x, -kMaxDeltaXY, kMaxDeltaXY);
  a.dy = std::clamp(ty - from.y, -kMaxDeltaXY, kMaxDeltaXY);
  a.g = g;
  return a;
}

// Grasp alignment is symmetric under a half turn.
double alignment_error(double target, double current) {
  double e = wrap_angle(target - current);
  if (e > std::numbers::pi / 2) e -= std::numbers::pi;
  if (e < -std::numbers::pi / 2) e += std::numbers::pi;
  return e;
}

}  // namespace

Action expert_action(const WorldState& state, const TaskSpec& task) {
  const Object* obj = target_object(state, task);
  const Receptacle* recv = target_receptacle(state, task);
  if (obj == nullptr) throw SimError("expert: target '" + task.target + "' not present in the scene");
  if (recv == nullptr) throw SimError("expert: receptacle '" + task.receptacle + "' not present in the scene");
  if (!in_workspace(obj->pose.x, obj->pose.y) || !in_workspace(recv->x, recv->y))
    throw SimError("expert: target unreachable (outside the workspace)");

  const Gripper& gr = state.gripper;
  if (gr.held && *gr.held != obj->id) return Action{0, 0, 0, -1.0};

  if (gr.held) {
    const double d = std::hypot(recv->x - gr.pose.x, recv->y - gr.pose.y);
    if (d > kArriveTolerance) return move_towards(gr.pose, recv->x, recv->y, 1.0);
    return Action{0, 0, 0, -1.0};
  }

  if (!gr.open) return Action{0, 0, 0, -1.0};
  const double d = std::hypot(obj->pose.x - gr.pose.x, obj->pose.y - gr.pose.y);
  if (d > kArriveTolerance) {
    Action a = move_towards(gr.pose, obj->pose.x, obj->pose.y, -1.0);
    a.dtheta = std::clamp(alignment_error(obj->pose.theta, gr.pose.theta), -kMaxDeltaTheta, kMaxDeltaTheta);
    return a;
  }
  return Action{0, 0, 0, 1.0};
}

}  // namespace anchorlab::sim
