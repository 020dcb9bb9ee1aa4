#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "anchorlab/data/normalize.hpp"
#include "anchorlab/nn/param_store.hpp"
#include "anchorlab/policy/network.hpp"

namespace anchorlab::policy {

struct PolicyBundle {
  PolicyConfig config;
  nn::ParamStore params;
  std::optional<data::NormStats> stats;
  std::string fingerprint;
};

// One closed-loop observation. Frames are borrowed.
struct Observation {
  std::vector<const sim::Frame*> context;  // per the policy's ContextMode
  const sim::Frame* current = nullptr;
  const sim::Frame* anchor = nullptr;  // I_0, used by the spatial encoder
  std::vector<std::int32_t> tokens;
  data::StateVec proprio{};  // raw
};

// Builds the observation for step i of a frame history (frames[0] is I_0).
Observation make_observation(const std::vector<sim::Frame>& history, int i, data::ContextMode mode,
                             const std::string& instruction, const data::StateVec& proprio);

struct ActOptions {
  int steps = 0;         // DDIM steps; 0 uses the config's inference_steps
  bool zero_se = false;  // compute the spatial encoder, then zero its output
};

// Conditioning vector (length d_cond) for one observation.
std::vector<float> condition_vector(const PolicyBundle& bundle, const Observation& obs, const ActOptions& opt = {});

// Denormalized action chunk of length H; gripper binarized to +/-1 at 0.
// Throws UsageError when the bundle carries no normalization stats.
std::vector<data::ActionVec> policy_act(const PolicyBundle& bundle, const Observation& obs, nn::RngStream& rng,
                                        const ActOptions& opt = {});

// AVCK1 parameters at `path` plus a JSON sidecar at `path` + ".json".
void save_bundle(const PolicyBundle& bundle, const std::filesystem::path& path);
// Throws LoadError when the parameter names do not match the sidecar config.
PolicyBundle load_bundle(const std::filesystem::path& path);

// Names expected for `cfg` that are missing from `params`, and extras.
struct NameDiff {
  std::vector<std::string> missing;
  std::vector<std::string> unexpected;
  bool empty() const { return missing.empty() && unexpected.empty(); }
};
NameDiff diff_names(const PolicyConfig& cfg, const nn::ParamStore& params);

}  // namespace anchorlab::policy
