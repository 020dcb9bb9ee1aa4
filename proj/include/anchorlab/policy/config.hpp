#pragma once

#include <string>

#include "json.hpp"

#include "anchorlab/data/context.hpp"

namespace anchorlab::policy {

enum class SeMode { kOff, kFrozen, kUnfrozen, kRemovedAtEval };
enum class Injection { kConcat, kPreDecoder, kInHead };

std::string se_mode_name(SeMode m);
SeMode se_mode_from_name(const std::string& name);
std::string injection_name(Injection i);
Injection injection_from_name(const std::string& name);

struct PolicyConfig {
  data::ContextMode context = data::ContextMode::kAnchorI0;
  SeMode se_mode = SeMode::kOff;
  Injection injection = Injection::kConcat;
  bool use_proprio = true;

  int d_model = 128;
  int vl_layers = 4;
  int vl_heads = 4;
  int d_se = 64;
  int se_layers = 2;
  int se_heads = 4;
  int se_tokens = 8;  // pooled SE tokens for the two injection modes
  int d_proprio = 32;
  int d_cond = 128;
  int head_width = 128;
  int head_blocks = 4;
  int head_heads = 4;
  int mlp_ratio = 4;
  int chunk = 5;
  int action_dim = 4;
  int state_dim = 4;
  int image_size = 48;
  int patch = 8;
  int max_tokens = 6;
  int train_levels = 100;
  // Final beta of the linear noise schedule (first beta is 1e-4).
  double beta_end = 0.02;
  int inference_steps = 10;

  bool uses_se() const { return se_mode != SeMode::kOff; }
  int patches_per_frame() const { return (image_size / patch) * (image_size / patch); }
  int patch_dim() const { return patch * patch * 3; }
  bool operator==(const PolicyConfig&) const = default;
};

// Throws ConfigError naming the offending field.
void validate(const PolicyConfig& cfg);

nlohmann::json to_json(const PolicyConfig& cfg);
// Missing keys take defaults; unknown keys are rejected.
PolicyConfig policy_config_from_json(const nlohmann::json& j);

}  // namespace anchorlab::policy
