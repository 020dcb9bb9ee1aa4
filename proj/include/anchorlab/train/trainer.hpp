#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "anchorlab/data/manifest.hpp"
#include "anchorlab/nn/param_store.hpp"
#include "anchorlab/policy/policy.hpp"

namespace anchorlab::train {

enum class Phase { kSePretrain, kPretrain, kFinetune };

std::string phase_name(Phase p);
// Throws ConfigError for unknown names.
Phase phase_from_name(const std::string& name);

struct TrainConfig {
  Phase phase = Phase::kPretrain;
  int steps = 0;   // 0 selects the phase default
  int batch = 0;   // 0 selects the phase default
  double lr = 0.0; // 0 selects the phase default
  double weight_decay = 1e-2;
  double clip_norm = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;

  bool operator==(const TrainConfig&) const = default;
};

// Fills phase defaults: steps 3000/20000/4000, batch 64/64/32,
// lr 1e-3 (SE pretext) or 2e-5 (policy phases).
TrainConfig resolved(TrainConfig c);
// Throws ConfigError on non-positive steps/batch/lr or out-of-range betas.
void validate(const TrainConfig& c);

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Learning rate for the update that follows `done` completed steps out of
// `total`: constant in pretraining and the SE pretext phase, cosine to zero
// in finetuning.
double learning_rate(const TrainConfig& c, std::int64_t done, std::int64_t total);

// Names excluded from updates. Pretrain and unfrozen finetune freeze nothing;
// finetune with a frozen (or removed-at-eval) encoder freezes every se.* name
// except the adapter.
std::set<std::string> freeze_plan(Phase phase, policy::SeMode mode, const nn::ParamStore& params);

struct AdamState {
  nn::ParamStore m;
  nn::ParamStore v;
  std::int64_t t = 0;
  bool operator==(const AdamState&) const = default;
};

// Global L2 norm of the gradients of non-frozen names, then in-place scaling
// to `max_norm` when it is exceeded. Returns the pre-clip norm.
double clip_grad_norm(nn::ParamStore& grads, double max_norm, const std::set<std::string>& frozen = {});

// Decoupled-weight-decay Adam: p <- p (1 - lr wd) - lr m_hat / (sqrt(v_hat) + eps).
// Frozen names are left untouched, bytes included.
void adamw_step(nn::ParamStore& params, const nn::ParamStore& grads, AdamState& state, double lr,
                const TrainConfig& c, const std::set<std::string>& frozen = {});

struct LogEntry {
  std::int64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double gnorm = 0.0;
  double t_ms = 0.0;
};

// Append-only; serialized as one JSON object per line.
class TrainLog {
 public:
  void append(const LogEntry& e);
  const std::vector<LogEntry>& entries() const { return entries_; }
  std::string to_jsonl() const;
  void write(const std::filesystem::path& path) const;

 private:
  std::vector<LogEntry> entries_;
};

// Parameters plus optimizer state; `step` counts completed updates.
struct TrainState {
  nn::ParamStore params;
  AdamState opt;
  std::int64_t step = 0;
};

// Reserved prefix for optimizer tensors stored next to parameters.
inline constexpr const char* kOptPrefix = "__opt.";

nn::ParamStore pack_state(const TrainState& st);
TrainState unpack_state(const nn::ParamStore& packed);

// Runs updates until `state.step == until`. Each step draws its batch from
// RngStream(seed, Data).fork(step) and its noise from
// RngStream(seed, Diffusion).fork(step), so a resumed run replays the same
// sequence. Throws TrainingError on a non-finite loss.
void train_policy_steps(TrainState& state, const policy::PolicyConfig& cfg, const TrainConfig& tc,
                        const data::Dataset& ds, std::int64_t until, TrainLog* log = nullptr);

// Parameters for `cfg`: fresh initialization, then every name present with
// the same shape in `init` is copied, then se.* names (minus the adapter) are
// taken from `se_weights` when given.
nn::ParamStore finetune_params(const policy::PolicyConfig& cfg, const nn::ParamStore& init,
                               const nn::ParamStore* se_weights, std::uint64_t seed);

// Full phase run. Finetune requires `init` (a pretrained parameter set).
// The freeze plan is applied for the whole run.
struct PolicyRun {
  policy::PolicyBundle bundle;
  TrainState state;
  TrainLog log;
};
PolicyRun train_policy(const policy::PolicyConfig& cfg, TrainConfig tc, const data::Dataset& ds,
                       const nn::ParamStore* init = nullptr, const nn::ParamStore* se_weights = nullptr);

// ---- spatial-encoder pretext ----

inline constexpr int kPretextTargets = 4;  // gripper dx, dy; target object dx, dy

// Displacements between I_0 and I_i taken from the re-simulated episode.
// Throws UsageError when the episode does not replay (no ground truth).
std::vector<std::array<float, kPretextTargets>> pretext_targets(const data::Episode& ep);

struct PretextEval {
  double mse = 0.0;
  double target_variance = 0.0;
  double r2 = 0.0;  // 1 - SSE / SST pooled over the four targets
  std::int64_t pairs = 0;
};

struct SeRun {
  nn::ParamStore se_weights;  // se.* only, regression head discarded
  PretextEval eval;
  TrainLog log;
};

SeRun se_pretrain(const policy::PolicyConfig& cfg, TrainConfig tc, const data::Dataset& ds);

// Evaluates every (I_0, I_i) pair of the eval split with the pretext head.
PretextEval evaluate_pretext(const policy::PolicyConfig& cfg, const nn::ParamStore& params,
                             const data::EpisodeStore& store, data::Split split);

}  // namespace anchorlab::train
