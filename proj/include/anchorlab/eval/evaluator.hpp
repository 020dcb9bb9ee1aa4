#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "anchorlab/data/episode.hpp"
#include "anchorlab/policy/policy.hpp"
#include "anchorlab/sim/render.hpp"
#include "anchorlab/sim/world.hpp"

namespace anchorlab::eval {

inline constexpr int kReportSchemaVersion = 1;

// One simulator step as seen by the retry counter.
struct StepEvent {
  bool grasp_attempted = false;  // close command while open
  bool grasp_succeeded = false;
  bool released = false;         // a held object was let go
  bool task_success = false;     // success holds after this step
};

struct RetryCount {
  int attempts = 0;
  int retries = 0;
  bool operator==(const RetryCount&) const = default;
};

// attempts = close-command rising edges; retries = attempts that grasp
// nothing, plus attempts made after a release that did not complete the task.
RetryCount count_retries(const std::vector<StepEvent>& trace);

// Maps an observation (and, for oracles only, the true world state) to an
// action chunk. The first exec_k entries are executed.
using Controller =
    std::function<std::vector<data::ActionVec>(const policy::Observation&, const sim::WorldState&, nn::RngStream&)>;

Controller policy_controller(const policy::PolicyBundle& bundle, policy::ActOptions opt = {});
// Oracle substitution: the scripted expert, one action per call.
Controller expert_controller(const sim::TaskSpec& task);
// Always (0, 0, 0, 0): never moves, never toggles the gripper.
Controller zero_controller();

struct RolloutOptions {
  int exec_k = 1;
  data::ContextMode context = data::ContextMode::kNone;
  const sim::Frame* anchor_override = nullptr;  // replaces the cached I_0
  bool record = false;                          // keep frames/states/actions
  sim::RenderConfig render;
};

struct RolloutResult {
  sim::TaskFamily family = sim::TaskFamily::kSpoonOnTowel;
  std::uint64_t seed = 0;
  bool success = false;
  int steps = 0;
  int attempts = 0;
  int retries = 0;
  int inferences = 0;
  std::vector<double> latencies_ms;
  std::vector<StepEvent> trace;
  std::vector<data::ActionVec> executed;
  std::optional<data::Episode> episode;
};

// Stops at success or after 120 steps. Latency is measured around the
// controller call only. SimError is rethrown with the step index.
RolloutResult rollout(const Controller& controller, sim::TaskFamily family, std::uint64_t seed,
                      const RolloutOptions& opt = {});

struct TaskRate {
  double sr = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  int trials = 0;
  int successes = 0;
};

// 95% Wilson score interval.
std::pair<double, double> wilson_interval(int successes, int trials, double z = 1.959963984540054);

struct EvalReport {
  nlohmann::json config;  // carries "fingerprint" and "schema_version"
  std::map<std::string, TaskRate> tasks;
  double average = 0.0;
  double retries_overall = 0.0;
  std::optional<double> retries_success;
  std::optional<double> retries_failure;
  int success_episodes = 0;
  int failure_episodes = 0;
  double latency_mean_ms = 0.0;
  double latency_p50_ms = 0.0;
  std::optional<double> overhead_vs_base;
  std::vector<std::uint64_t> seeds;
};

// Aggregates rollouts: per-task rates, unweighted task average, retry means
// over all / successful / failed episodes (null when the set is empty).
EvalReport aggregate(const std::vector<RolloutResult>& results, nlohmann::json config,
                     std::vector<std::uint64_t> seeds);

nlohmann::json to_json(const EvalReport& r);
// Throws DataError on missing fields or a schema-version mismatch.
EvalReport report_from_json(const nlohmann::json& j);
// Report JSON with wall-time fields removed, for reproducibility checks.
nlohmann::json without_timing(nlohmann::json j);

struct EvalOptions {
  std::vector<sim::TaskFamily> suite{sim::kAllFamilies.begin(), sim::kAllFamilies.end()};
  int trials = 24;
  std::uint64_t seed = 0;
  int exec_k = 1;
  int steps = 0;  // DDIM steps, 0 = policy default
  int jobs = 1;
  bool zero_se = false;
  bool record = false;  // keep per-rollout episodes for trace dumps
  sim::RenderConfig render;
};

nlohmann::json to_json(const EvalOptions& o);

// Rollout seeds are seed + 0 .. seed + trials - 1 for every task.
// Rollouts land in `rollouts` (task-major, then seed) when given.
EvalReport evaluate(const policy::PolicyBundle& bundle, const EvalOptions& opt,
                    std::vector<RolloutResult>* rollouts = nullptr);
// Same aggregation with an arbitrary controller (used for oracle checks).
EvalReport evaluate_controller(const std::function<Controller(const sim::TaskSpec&)>& make, data::ContextMode context,
                               const EvalOptions& opt, nlohmann::json config,
                               std::vector<RolloutResult>* rollouts = nullptr);

struct LatencyRow {
  std::string variant;
  int visual_tokens = 0;
  double mean_ms = 0.0;
  double p50_ms = 0.0;
  double overhead = 0.0;  // mean / mean(first row) - 1
};

struct LatencyProfile {
  std::vector<LatencyRow> rows;
  int inferences = 0;
};

// Variants: no anchor and no encoder, +anchor, +anchor+encoder (frozen, concat).
std::vector<std::pair<std::string, policy::PolicyConfig>> latency_variants(const policy::PolicyConfig& base);

// Times `n` inferences per variant after `warmup` untimed ones.
LatencyProfile latency_profile(const std::vector<std::pair<std::string, policy::PolicyBundle>>& variants, int n,
                               int warmup = 5, int ddim_steps = 0);

// Reference figures from the original study, reported as annotation only.
nlohmann::json latency_reference();
nlohmann::json to_json(const LatencyProfile& p);

}  // namespace anchorlab::eval
