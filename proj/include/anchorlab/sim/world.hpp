#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "anchorlab/nn/rng.hpp"

namespace anchorlab::sim {

inline constexpr double kMaxDeltaXY = 0.05;
inline constexpr double kMaxDeltaTheta = 0.2;
inline constexpr double kGraspRadius = 0.04;
inline constexpr double kPlacementRadius = 0.08;
inline constexpr int kEpisodeHorizon = 120;
inline constexpr int kStateDim = 4;
inline constexpr int kActionDim = 4;

enum class TaskFamily : std::uint8_t {
  kSpoonOnTowel = 0,
  kCarrotOnPlate = 1,
  kStackCube = 2,
  kEggplantInBasket = 3,
};

inline constexpr std::array<TaskFamily, 4> kAllFamilies = {TaskFamily::kSpoonOnTowel, TaskFamily::kCarrotOnPlate,
                                                           TaskFamily::kStackCube, TaskFamily::kEggplantInBasket};

std::string family_name(TaskFamily f);
// Throws UsageError for unknown names or ids.
TaskFamily family_from_name(const std::string& name);
TaskFamily family_from_id(std::uint8_t id);

using Rgb = std::array<std::uint8_t, 3>;

enum class Shape2D : std::uint8_t { kRect, kEllipse, kDisc, kRing };

// Static description of a movable object or a receptacle kind.
struct KindInfo {
  std::string name;
  Shape2D shape;
  double half_length;  // along the local x axis
  double half_width;   // along the local y axis
  Rgb color;
};

const std::vector<KindInfo>& object_catalog();
const std::vector<KindInfo>& receptacle_catalog();
std::optional<int> find_object_kind(const std::string& name);
std::optional<int> find_receptacle_kind(const std::string& name);

struct Pose {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
  bool operator==(const Pose&) const = default;
};

struct Object {
  int id = 0;
  int kind = 0;  // index into object_catalog()
  Pose pose;
  double half_length = 0.0;
  double half_width = 0.0;
  bool operator==(const Object&) const = default;
};

struct Receptacle {
  int id = 0;
  int kind = 0;  // index into receptacle_catalog()
  double x = 0.0;
  double y = 0.0;
  double radius = kPlacementRadius;
  bool operator==(const Receptacle&) const = default;
};

struct Gripper {
  Pose pose;
  bool open = true;
  std::optional<int> held;  // object id
  bool operator==(const Gripper&) const = default;
};

struct WorldState {
  Gripper gripper;
  std::vector<Object> objects;
  std::vector<Receptacle> receptacles;
  int step_count = 0;

  const Object* object_by_id(int id) const;
  Object* object_by_id(int id);
  bool operator==(const WorldState&) const = default;
};

struct Action {
  double dx = 0.0;
  double dy = 0.0;
  double dtheta = 0.0;
  // > 0 closes, < 0 opens, exactly 0 keeps the current gripper state.
  double g = 0.0;
  bool operator==(const Action&) const = default;
};

struct StepInfo {
  bool grasp_attempted = false;
  bool grasp_succeeded = false;
  bool placed = false;  // a held object was released this step
  std::optional<int> attached_id;
  std::optional<int> released_id;
};

struct TaskSpec {
  TaskFamily family = TaskFamily::kSpoonOnTowel;
  std::vector<std::string> instruction;
  std::string target;      // object kind name
  std::string receptacle;  // receptacle kind name
  std::vector<std::string> distractors;
  double placement_radius = kPlacementRadius;
  // Probability that the receptacle is placed in the target's column, where
  // the arm hides it while the target is being grasped.
  double occlusion_bias = 0.5;
};

TaskSpec make_task(TaskFamily family);
std::string instruction_text(const TaskSpec& task);

// Randomized initial layout. Throws SimError for unknown kinds or when
// placement fails after 100 rejection samples.
WorldState reset(const TaskSpec& task, nn::RngStream& rng);
WorldState reset(const TaskSpec& task, std::uint64_t seed);

// Throws SimError on non-finite action components.
WorldState step(const WorldState& state, const Action& action, StepInfo* info = nullptr);

// Target object placed inside the receptacle region, released, gripper open.
bool success(const WorldState& state, const TaskSpec& task);

// Raw (x, y, theta, open ? 1 : 0).
std::array<float, kStateDim> proprio(const WorldState& state);

const Object* target_object(const WorldState& state, const TaskSpec& task);
const Receptacle* target_receptacle(const WorldState& state, const TaskSpec& task);

double wrap_angle(double a);

}  // namespace anchorlab::sim
