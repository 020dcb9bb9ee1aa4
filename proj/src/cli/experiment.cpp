#include "anchorlab/cli/experiment.hpp"

#include <fstream>
#include <set>

#include "anchorlab/common/errors.hpp"

namespace anchorlab::cli {
namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::string& section, const std::set<std::string>& known) {
  if (!j.is_object()) throw ConfigError(section + " must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!known.contains(k)) throw ConfigError("unknown key in " + section + ": '" + k + "'");
}

template <class T>
void read(const json& j, const std::string& section, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(section + "." + key + ": " + e.what());
  }
}

train::TrainConfig phase_block(const json& j, train::Phase p) {
  json copy = j;
  copy.erase("phase");
  train::TrainConfig c = train::train_config_from_json(copy);
  c.phase = p;
  return c;
}

json phase_json(const train::TrainConfig& c) {
  json j = train::to_json(c);
  j.erase("phase");
  return j;
}

}  // namespace

const train::TrainConfig& ExperimentConfig::phase(train::Phase p) const {
  switch (p) {
    case train::Phase::kSePretrain: return se_pretrain;
    case train::Phase::kPretrain: return pretrain;
    case train::Phase::kFinetune: return finetune;
  }
  return pretrain;
}

sim::RenderConfig ExperimentConfig::render() const {
  sim::RenderConfig r;
  r.size = sim.image_size;
  r.arm_width_px = sim.arm_width_px;
  return r;
}

void validate(const ExperimentConfig& c) {
  if (c.sim.image_size <= 0) throw ConfigError("sim.image_size must be positive");
  if (c.sim.arm_width_px < 0) throw ConfigError("sim.arm_width_px must be >= 0");
  if (c.sim.image_size != c.policy.image_size)
    throw ConfigError("sim.image_size (" + std::to_string(c.sim.image_size) + ") != policy.image_size (" +
                      std::to_string(c.policy.image_size) + ")");
  if (c.data.episodes_per_family < 1) throw ConfigError("data.episodes_per_family must be >= 1");
  if (c.data.eval_fraction < 0.0 || c.data.eval_fraction >= 1.0) throw ConfigError("data.eval_fraction must be in [0, 1)");
  if (c.data.max_expert_failure < 0.0 || c.data.max_expert_failure > 1.0)
    throw ConfigError("data.max_expert_failure must be in [0, 1]");
  policy::validate(c.policy);
  for (auto p : {train::Phase::kSePretrain, train::Phase::kPretrain, train::Phase::kFinetune})
    train::validate(train::resolved(c.phase(p)));
  if (c.eval.suite.empty()) throw ConfigError("eval.suite must not be empty");
  if (c.eval.trials < 1) throw ConfigError("eval.trials must be >= 1");
  if (c.eval.exec_k < 1 || c.eval.exec_k > c.policy.chunk)
    throw ConfigError("eval.exec_k must be in [1, policy.chunk]");
  if (c.eval.steps < 1 || c.eval.steps > c.policy.train_levels) throw ConfigError("eval.steps must be in [1, train_levels]");
}

json to_json(const ExperimentConfig& c) {
  std::vector<std::string> suite;
  for (auto f : c.eval.suite) suite.push_back(sim::family_name(f));
  return {
      {"sim", {{"image_size", c.sim.image_size}, {"arm_width_px", c.sim.arm_width_px}}},
      {"data",
       {{"episodes_per_family", c.data.episodes_per_family},
        {"eval_fraction", c.data.eval_fraction},
        {"first_seed", c.data.first_seed},
        {"max_expert_failure", c.data.max_expert_failure}}},
      {"policy", policy::to_json(c.policy)},
      {"train",
       {{"se-pretrain", phase_json(c.se_pretrain)},
        {"pretrain", phase_json(c.pretrain)},
        {"finetune", phase_json(c.finetune)}}},
      {"eval",
       {{"suite", suite}, {"trials", c.eval.trials}, {"exec_k", c.eval.exec_k}, {"K", c.eval.steps}, {"seed", c.eval.seed}}},
  };
}

ExperimentConfig experiment_config_from_json(const json& j) {
  reject_unknown(j, "config", {"sim", "data", "policy", "train", "eval"});
  ExperimentConfig c;
  if (j.contains("sim")) {
    const json& s = j.at("sim");
    reject_unknown(s, "sim", {"image_size", "arm_width_px"});
    read(s, "sim", "image_size", c.sim.image_size);
    read(s, "sim", "arm_width_px", c.sim.arm_width_px);
  }
  if (j.contains("data")) {
    const json& d = j.at("data");
    reject_unknown(d, "data", {"episodes_per_family", "eval_fraction", "first_seed", "max_expert_failure"});
    read(d, "data", "episodes_per_family", c.data.episodes_per_family);
    read(d, "data", "eval_fraction", c.data.eval_fraction);
    read(d, "data", "first_seed", c.data.first_seed);
    read(d, "data", "max_expert_failure", c.data.max_expert_failure);
  }
  if (j.contains("policy")) c.policy = policy::policy_config_from_json(j.at("policy"));
  if (j.contains("train")) {
    const json& t = j.at("train");
    reject_unknown(t, "train", {"se-pretrain", "pretrain", "finetune"});
    if (t.contains("se-pretrain")) c.se_pretrain = phase_block(t.at("se-pretrain"), train::Phase::kSePretrain);
    if (t.contains("pretrain")) c.pretrain = phase_block(t.at("pretrain"), train::Phase::kPretrain);
    if (t.contains("finetune")) c.finetune = phase_block(t.at("finetune"), train::Phase::kFinetune);
  }
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    reject_unknown(e, "eval", {"suite", "trials", "exec_k", "K", "seed"});
    if (e.contains("suite")) {
      std::vector<std::string> names;
      read(e, "eval", "suite", names);
      c.eval.suite.clear();
      try {
        for (const auto& n : names) c.eval.suite.push_back(sim::family_from_name(n));
      } catch (const UsageError& err) {
        throw ConfigError(std::string("eval.suite: ") + err.what());
      }
    }
    read(e, "eval", "trials", c.eval.trials);
    read(e, "eval", "exec_k", c.eval.exec_k);
    read(e, "eval", "K", c.eval.steps);
    read(e, "eval", "seed", c.eval.seed);
  }
  validate(c);
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return experiment_config_from_json(j);
}

eval::EvalOptions eval_options(const EvalSection& e) {
  eval::EvalOptions o;
  o.suite = e.suite;
  o.trials = e.trials;
  o.exec_k = e.exec_k;
  o.steps = e.steps;
  o.seed = e.seed;
  return o;
}

}  // namespace anchorlab::cli
