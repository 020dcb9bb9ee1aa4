#include "anchorlab/policy/config.hpp"

#include <set>

#include "anchorlab/common/errors.hpp"

namespace anchorlab::policy {

std::string se_mode_name(SeMode m) {
  switch (m) {
    case SeMode::kOff:
      return "off";
    case SeMode::kFrozen:
      return "frozen";
    case SeMode::kUnfrozen:
      return "unfrozen";
    case SeMode::kRemovedAtEval:
      return "removed_at_eval";
  }
  throw ConfigError("unknown se mode");
}

SeMode se_mode_from_name(const std::string& name) {
  for (auto m : {SeMode::kOff, SeMode::kFrozen, SeMode::kUnfrozen, SeMode::kRemovedAtEval})
    if (se_mode_name(m) == name) return m;
  throw ConfigError("unknown se_mode: " + name);
}

std::string injection_name(Injection i) {
  switch (i) {
    case Injection::kConcat:
      return "concat";
    case Injection::kPreDecoder:
      return "pre_decoder";
    case Injection::kInHead:
      return "in_head";
  }
  throw ConfigError("unknown injection");
}

Injection injection_from_name(const std::string& name) {
  for (auto i : {Injection::kConcat, Injection::kPreDecoder, Injection::kInHead})
    if (injection_name(i) == name) return i;
  throw ConfigError("unknown injection: " + name);
}

void validate(const PolicyConfig& c) {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw ConfigError(std::string("policy.") + name + " must be positive, got " + std::to_string(v));
  };
  positive(c.d_model, "d_model");
  positive(c.vl_layers, "vl_layers");
  positive(c.vl_heads, "vl_heads");
  positive(c.d_se, "d_se");
  positive(c.se_layers, "se_layers");
  positive(c.se_heads, "se_heads");
  positive(c.se_tokens, "se_tokens");
  positive(c.d_proprio, "d_proprio");
  positive(c.d_cond, "d_cond");
  positive(c.head_width, "head_width");
  positive(c.head_blocks, "head_blocks");
  positive(c.head_heads, "head_heads");
  positive(c.mlp_ratio, "mlp_ratio");
  positive(c.chunk, "chunk");
  positive(c.patch, "patch");
  positive(c.max_tokens, "max_tokens");
  positive(c.train_levels, "train_levels");
  positive(c.inference_steps, "inference_steps");
  if (!(c.beta_end > 1e-4 && c.beta_end < 1.0)) throw ConfigError("policy.beta_end must lie in (1e-4, 1)");
  if (c.action_dim != 4 || c.state_dim != 4) throw ConfigError("policy.action_dim and policy.state_dim must be 4");
  if (c.image_size <= 0 || c.image_size % c.patch != 0)
    throw ConfigError("policy.patch " + std::to_string(c.patch) + " does not divide image_size " +
                      std::to_string(c.image_size));
  if (c.injection != Injection::kConcat && c.se_mode == SeMode::kOff)
    throw ConfigError("policy.injection " + injection_name(c.injection) + " requires se_mode != off");
  if (c.d_model % c.vl_heads != 0) throw ConfigError("policy.vl_heads must divide d_model");
  if (c.d_se % c.se_heads != 0) throw ConfigError("policy.se_heads must divide d_se");
  if (c.head_width % c.head_heads != 0) throw ConfigError("policy.head_heads must divide head_width");
  if (c.head_width % 2 != 0) throw ConfigError("policy.head_width must be even");
  if (c.inference_steps > c.train_levels || c.train_levels % c.inference_steps != 0)
    throw ConfigError("policy.inference_steps " + std::to_string(c.inference_steps) + " must divide train_levels " +
                      std::to_string(c.train_levels));
}

nlohmann::json to_json(const PolicyConfig& c) {
  return {{"context", data::context_mode_name(c.context)},
          {"se_mode", se_mode_name(c.se_mode)},
          {"injection", injection_name(c.injection)},
          {"use_proprio", c.use_proprio},
          {"d_model", c.d_model},
          {"vl_layers", c.vl_layers},
          {"vl_heads", c.vl_heads},
          {"d_se", c.d_se},
          {"se_layers", c.se_layers},
          {"se_heads", c.se_heads},
          {"se_tokens", c.se_tokens},
          {"d_proprio", c.d_proprio},
          {"d_cond", c.d_cond},
          {"head_width", c.head_width},
          {"head_blocks", c.head_blocks},
          {"head_heads", c.head_heads},
          {"mlp_ratio", c.mlp_ratio},
          {"chunk", c.chunk},
          {"action_dim", c.action_dim},
          {"state_dim", c.state_dim},
          {"image_size", c.image_size},
          {"patch", c.patch},
          {"max_tokens", c.max_tokens},
          {"train_levels", c.train_levels},
          {"beta_end", c.beta_end},
          {"inference_steps", c.inference_steps}};
}

PolicyConfig policy_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("policy config must be a JSON object");
  PolicyConfig c;
  const nlohmann::json defaults = to_json(c);
  for (const auto& [key, _] : j.items())
    if (!defaults.contains(key)) throw ConfigError("unknown key policy." + key);
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    if (j.contains("context")) c.context = data::context_mode_from_name(j.at("context").get<std::string>());
    if (j.contains("se_mode")) c.se_mode = se_mode_from_name(j.at("se_mode").get<std::string>());
    if (j.contains("injection")) c.injection = injection_from_name(j.at("injection").get<std::string>());
    get("use_proprio", c.use_proprio);
    get("d_model", c.d_model);
    get("vl_layers", c.vl_layers);
    get("vl_heads", c.vl_heads);
    get("d_se", c.d_se);
    get("se_layers", c.se_layers);
    get("se_heads", c.se_heads);
    get("se_tokens", c.se_tokens);
    get("d_proprio", c.d_proprio);
    get("d_cond", c.d_cond);
    get("head_width", c.head_width);
    get("head_blocks", c.head_blocks);
    get("head_heads", c.head_heads);
    get("mlp_ratio", c.mlp_ratio);
    get("chunk", c.chunk);
    get("action_dim", c.action_dim);
    get("state_dim", c.state_dim);
    get("image_size", c.image_size);
    get("patch", c.patch);
    get("max_tokens", c.max_tokens);
    get("train_levels", c.train_levels);
    get("beta_end", c.beta_end);
    get("inference_steps", c.inference_steps);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad policy config value: ") + e.what());
  }
  validate(c);
  return c;
}

}  // namespace anchorlab::policy
