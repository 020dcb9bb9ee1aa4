#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "anchorlab/eval/evaluator.hpp"
#include "anchorlab/policy/config.hpp"
#include "anchorlab/sim/render.hpp"
#include "anchorlab/train/trainer.hpp"

namespace anchorlab::cli {

struct SimSection {
  int image_size = 48;
  int arm_width_px = 6;
  bool operator==(const SimSection&) const = default;
};

struct DataSection {
  int episodes_per_family = 200;
  double eval_fraction = 0.1;           // trailing share of each family's episodes
  std::uint32_t first_seed = 1000000;   // kept clear of evaluation seeds 0..trials-1
  double max_expert_failure = 0.05;
  bool operator==(const DataSection&) const = default;
};

struct EvalSection {
  std::vector<sim::TaskFamily> suite{sim::kAllFamilies.begin(), sim::kAllFamilies.end()};
  int trials = 24;
  int exec_k = 1;
  int steps = 10;  // DDIM steps K
  std::uint64_t seed = 0;
  bool operator==(const EvalSection&) const = default;
};

struct ExperimentConfig {
  SimSection sim;
  DataSection data;
  policy::PolicyConfig policy;
  // One block per phase; `phase` inside a block is ignored.
  train::TrainConfig se_pretrain{.phase = train::Phase::kSePretrain};
  train::TrainConfig pretrain{.phase = train::Phase::kPretrain};
  train::TrainConfig finetune{.phase = train::Phase::kFinetune};
  EvalSection eval;

  const train::TrainConfig& phase(train::Phase p) const;
  sim::RenderConfig render() const;
  bool operator==(const ExperimentConfig&) const = default;
};

// Throws ConfigError naming the field.
void validate(const ExperimentConfig& c);

nlohmann::json to_json(const ExperimentConfig& c);
// Missing keys take defaults; unknown keys raise ConfigError.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

eval::EvalOptions eval_options(const EvalSection& e);

}  // namespace anchorlab::cli
