#include "anchorlab/sim/world.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "anchorlab/common/errors.hpp"

namespace anchorlab::sim {
namespace {

constexpr double kPi = std::numbers::pi;
constexpr int kMaxPlacementAttempts = 100;
constexpr double kWorkspaceMargin = 0.05;
constexpr double kClearance = 0.02;
constexpr int kFirstReceptacleId = 100;

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

double bounding_radius(const KindInfo& k) { return std::max(k.half_length, k.half_width); }

bool inside_workspace(double x, double y, double r) {
  return x - r >= kWorkspaceMargin && x + r <= 1.0 - kWorkspaceMargin && y - r >= kWorkspaceMargin &&
         y + r <= 1.0 - kWorkspaceMargin;
}

}  // namespace

std::string family_name(TaskFamily f) {
  switch (f) {
    case TaskFamily::kSpoonOnTowel:
      return "spoon_on_towel";
    case TaskFamily::kCarrotOnPlate:
      return "carrot_on_plate";
    case TaskFamily::kStackCube:
      return "stack_cube";
    case TaskFamily::kEggplantInBasket:
      return "eggplant_in_basket";
  }
  throw UsageError("unknown task family id " + std::to_string(static_cast<int>(f)));
}

TaskFamily family_from_name(const std::string& name) {
  for (auto f : kAllFamilies)
    if (family_name(f) == name) return f;
  throw UsageError("unknown task family: " + name);
}

TaskFamily family_from_id(std::uint8_t id) {
  if (id >= kAllFamilies.size()) throw UsageError("unknown task family id " + std::to_string(id));
  return kAllFamilies[id];
}

const std::vector<KindInfo>& object_catalog() {
  static const std::vector<KindInfo> kObjects = {
      {"spoon", Shape2D::kRect, 0.09, 0.022, {176, 176, 196}},
      {"carrot", Shape2D::kRect, 0.08, 0.028, {240, 118, 22}},
      {"green cube", Shape2D::kRect, 0.045, 0.045, {40, 168, 60}},
      {"eggplant", Shape2D::kEllipse, 0.085, 0.045, {112, 38, 132}},
  };
  return kObjects;
}

const std::vector<KindInfo>& receptacle_catalog() {
  static const std::vector<KindInfo> kReceptacles = {
      {"towel", Shape2D::kRect, 0.09, 0.09, {70, 110, 200}},
      {"plate", Shape2D::kDisc, 0.08, 0.08, {246, 246, 246}},
      {"yellow cube", Shape2D::kRect, 0.05, 0.05, {236, 210, 40}},
      {"basket", Shape2D::kRing, 0.09, 0.09, {140, 88, 40}},
  };
  return kReceptacles;
}

std::optional<int> find_object_kind(const std::string& name) {
  const auto& c = object_catalog();
  for (std::size_t i = 0; i < c.size(); ++i)
    if (c[i].name == name) return static_cast<int>(i);
  return std::nullopt;
}

std::optional<int> find_receptacle_kind(const std::string& name) {
  const auto& c = receptacle_catalog();
  for (std::size_t i = 0; i < c.size(); ++i)
    if (c[i].name == name) return static_cast<int>(i);
  return std::nullopt;
}

const Object* WorldState::object_by_id(int id) const {
  for (const auto& o : objects)
    if (o.id == id) return &o;
  return nullptr;
}

Object* WorldState::object_by_id(int id) {
  for (auto& o : objects)
    if (o.id == id) return &o;
  return nullptr;
}

double wrap_angle(double a) {
  a = std::fmod(a + kPi, 2.0 * kPi);
  if (a <= 0.0) a += 2.0 * kPi;
  return a - kPi;
}

TaskSpec make_task(TaskFamily family) {
  TaskSpec t;
  t.family = family;
  switch (family) {
    case TaskFamily::kSpoonOnTowel:
      t.instruction = {"put", "spoon", "on", "towel"};
      t.target = "spoon";
      t.receptacle = "towel";
      t.distractors = {"carrot", "green cube", "eggplant"};
      break;
    case TaskFamily::kCarrotOnPlate:
      t.instruction = {"put", "carrot", "on", "plate"};
      t.target = "carrot";
      t.receptacle = "plate";
      t.distractors = {"spoon", "green cube", "eggplant"};
      break;
    case TaskFamily::kStackCube:
      t.instruction = {"stack", "green", "cube", "on", "yellow", "cube"};
      t.target = "green cube";
      t.receptacle = "yellow cube";
      t.distractors = {"spoon", "carrot", "eggplant"};
      break;
    case TaskFamily::kEggplantInBasket:
      t.instruction = {"put", "eggplant", "in", "basket"};
      t.target = "eggplant";
      t.receptacle = "basket";
      t.distractors = {"spoon", "carrot", "green cube"};
      break;
  }
  return t;
}

std::string instruction_text(const TaskSpec& task) {
  std::ostringstream os;
  for (std::size_t i = 0; i < task.instruction.size(); ++i) os << (i ? " " : "") << task.instruction[i];
  return os.str();
}

WorldState reset(const TaskSpec& task, std::uint64_t seed) {
  nn::RngStream rng(seed, nn::Stream::kSim);
  return reset(task, rng);
}

WorldState reset(const TaskSpec& task, nn::RngStream& rng) {
  auto target_kind = find_object_kind(task.target);
  if (!target_kind) throw SimError("task references unknown object '" + task.target + "'");
  auto recv_kind = find_receptacle_kind(task.receptacle);
  if (!recv_kind) throw SimError("task references unknown receptacle '" + task.receptacle + "'");
  std::vector<int> pool;
  for (const auto& d : task.distractors) {
    auto k = find_object_kind(d);
    if (!k) throw SimError("task references unknown distractor '" + d + "'");
    if (*k == *target_kind) throw SimError("distractor '" + d + "' duplicates the target kind");
    pool.push_back(*k);
  }
  if (pool.empty()) throw SimError("task has no distractor kinds");

  const auto& objs = object_catalog();
  const auto& recvs = receptacle_catalog();
  const KindInfo& tk = objs[static_cast<std::size_t>(*target_kind)];
  const KindInfo& rk = recvs[static_cast<std::size_t>(*recv_kind)];

  for (int attempt = 0; attempt < kMaxPlacementAttempts; ++attempt) {
    WorldState s;
    s.gripper.pose = {rng.uniform(0.1, 0.9), rng.uniform(0.05, 0.15), 0.0};
    s.gripper.open = true;

    Receptacle r;
    r.id = kFirstReceptacleId;
    r.kind = *recv_kind;
    r.x = rng.uniform(0.15, 0.85);
    r.y = rng.uniform(0.3, 0.7);
    r.radius = task.placement_radius;

    Object target;
    target.id = 1;
    target.kind = *target_kind;
    target.half_length = tk.half_length;
    target.half_width = tk.half_width;
    const bool occluded_layout = rng.uniform() < task.occlusion_bias;
    if (occluded_layout) {
      target.pose.x = r.x + rng.uniform(-0.02, 0.02);
      target.pose.y = r.y + rng.uniform(0.2, 0.3);
    } else {
      target.pose.x = rng.uniform(0.12, 0.88);
      target.pose.y = rng.uniform(0.3, 0.9);
    }
    target.pose.theta = rng.uniform(-kPi / 2, kPi / 2);
    s.objects.push_back(target);

    const int n_distractors = 1 + static_cast<int>(rng.uniform_int(2));
    std::vector<int> kinds = pool;
    for (int d = 0; d < n_distractors && !kinds.empty(); ++d) {
      auto pick = static_cast<std::size_t>(rng.uniform_int(kinds.size()));
      const int k = kinds[pick];
      kinds.erase(kinds.begin() + static_cast<std::ptrdiff_t>(pick));
      Object o;
      o.id = 2 + d;
      o.kind = k;
      o.half_length = objs[static_cast<std::size_t>(k)].half_length;
      o.half_width = objs[static_cast<std::size_t>(k)].half_width;
      o.pose = {rng.uniform(0.1, 0.9), rng.uniform(0.3, 0.9), rng.uniform(-kPi / 2, kPi / 2)};
      s.objects.push_back(o);
    }

    bool ok = inside_workspace(r.x, r.y, bounding_radius(rk));
    for (const auto& o : s.objects) {
      const double ro = std::max(o.half_length, o.half_width);
      ok = ok && inside_workspace(o.pose.x, o.pose.y, ro);
      ok = ok && std::hypot(o.pose.x - r.x, o.pose.y - r.y) >= ro + bounding_radius(rk) + kClearance;
    }
    for (std::size_t i = 0; ok && i < s.objects.size(); ++i) {
      for (std::size_t j = i + 1; ok && j < s.objects.size(); ++j) {
        const auto& a = s.objects[i];
        const auto& b = s.objects[j];
        const double need = std::max(a.half_length, a.half_width) + std::max(b.half_length, b.half_width) + kClearance;
        ok = std::hypot(a.pose.x - b.pose.x, a.pose.y - b.pose.y) >= need;
      }
    }
    if (!ok) continue;
    s.receptacles.push_back(r);
    return s;
  }
  throw SimError("object placement failed after " + std::to_string(kMaxPlacementAttempts) + " rejection samples");
}

WorldState step(const WorldState& state, const Action& action, StepInfo* info) {
  if (!std::isfinite(action.dx) || !std::isfinite(action.dy) || !std::isfinite(action.dtheta) ||
      !std::isfinite(action.g))
    throw SimError("non-finite action component at step " + std::to_string(state.step_count));
  StepInfo local;
  StepInfo& inf = info != nullptr ? *info : local;
  inf = StepInfo{};

  WorldState s = state;
  Gripper& gr = s.gripper;
  const double dx = std::clamp(action.dx, -kMaxDeltaXY, kMaxDeltaXY);
  const double dy = std::clamp(action.dy, -kMaxDeltaXY, kMaxDeltaXY);
  const double dth = std::clamp(action.dtheta, -kMaxDeltaTheta, kMaxDeltaTheta);
  gr.pose.x = clamp01(gr.pose.x + dx);
  gr.pose.y = clamp01(gr.pose.y + dy);
  gr.pose.theta = wrap_angle(gr.pose.theta + dth);
  if (gr.held) {
    Object* o = s.object_by_id(*gr.held);
    o->pose.x = gr.pose.x;
    o->pose.y = gr.pose.y;
    o->pose.theta = wrap_angle(o->pose.theta + dth);
  }

  if (action.g > 0.0 && gr.open) {
    gr.open = false;
    inf.grasp_attempted = true;
    const Object* best = nullptr;
    double best_d = kGraspRadius;
    for (const auto& o : s.objects) {
      const double d = std::hypot(o.pose.x - gr.pose.x, o.pose.y - gr.pose.y);
      if (d <= best_d && (best == nullptr || d < best_d)) {
        best = &o;
        best_d = d;
      }
    }
    if (best != nullptr) {
      gr.held = best->id;
      Object* o = s.object_by_id(best->id);
      o->pose.x = gr.pose.x;
      o->pose.y = gr.pose.y;
      inf.grasp_succeeded = true;
      inf.attached_id = best->id;
    }
  } else if (action.g < 0.0 && !gr.open) {
    gr.open = true;
    if (gr.held) {
      inf.placed = true;
      inf.released_id = gr.held;
      gr.held.reset();
    }
  }
  ++s.step_count;
  return s;
}

const Object* target_object(const WorldState& state, const TaskSpec& task) {
  auto kind = find_object_kind(task.target);
  if (!kind) return nullptr;
  for (const auto& o : state.objects)
    if (o.kind == *kind) return &o;
  return nullptr;
}

const Receptacle* target_receptacle(const WorldState& state, const TaskSpec& task) {
  auto kind = find_receptacle_kind(task.receptacle);
  if (!kind) return nullptr;
  for (const auto& r : state.receptacles)
    if (r.kind == *kind) return &r;
  return nullptr;
}

bool success(const WorldState& state, const TaskSpec& task) {
  const Object* o = target_object(state, task);
  const Receptacle* r = target_receptacle(state, task);
  if (o == nullptr || r == nullptr) return false;
  if (!state.gripper.open) return false;
  if (state.gripper.held && *state.gripper.held == o->id) return false;
  return std::hypot(o->pose.x - r->x, o->pose.y - r->y) <= task.placement_radius;
}

std::array<float, kStateDim> proprio(const WorldState& state) {
  const auto& p = state.gripper.pose;
  return {static_cast<float>(p.x), static_cast<float>(p.y), static_cast<float>(p.theta),
          state.gripper.open ? 1.0f : 0.0f};
}

}  // namespace anchorlab::sim
