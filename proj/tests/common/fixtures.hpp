#pragma once

#include "anchorlab/data/manifest.hpp"
#include "anchorlab/policy/config.hpp"

namespace anchorlab::fixtures {

// Expert episodes: `train` per family in the train split, `eval` per family
// in the eval split, with stats over the train split.
inline data::Dataset expert_dataset(int train, int eval, std::uint32_t first_seed = 100) {
  data::Dataset ds;
  std::uint32_t seed = first_seed;
  for (auto fam : sim::kAllFamilies) {
    for (int i = 0; i < train; ++i) ds.store.add(data::record_expert_episode(fam, seed++), data::Split::kTrain);
    for (int i = 0; i < eval; ++i) ds.store.add(data::record_expert_episode(fam, seed++), data::Split::kEval);
  }
  ds.stats = data::compute_norm_stats(ds.store.select(data::Split::kTrain));
  ds.fingerprint = "test";
  return ds;
}

// Full-resolution frames, narrow layers.
inline policy::PolicyConfig small_policy() {
  policy::PolicyConfig c;
  c.d_model = 16;
  c.vl_layers = 1;
  c.vl_heads = 2;
  c.d_se = 8;
  c.se_layers = 1;
  c.se_heads = 2;
  c.se_tokens = 2;
  c.d_proprio = 4;
  c.d_cond = 16;
  c.head_width = 16;
  c.head_blocks = 1;
  c.head_heads = 2;
  c.mlp_ratio = 2;
  return c;
}

}  // namespace anchorlab::fixtures
