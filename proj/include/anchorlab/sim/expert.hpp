#pragma once

#include "anchorlab/sim/world.hpp"

namespace anchorlab::sim {

// Scripted proportional controller: approach the target with the gripper
// open, close on it, carry it to the receptacle, open. Throws SimError when
// the target object or receptacle is missing or outside the workspace.
Action expert_action(const WorldState& state, const TaskSpec& task);

}  // namespace anchorlab::sim
