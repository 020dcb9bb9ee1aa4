#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "anchorlab/data/context.hpp"
#include "anchorlab/data/episode.hpp"
#include "anchorlab/data/normalize.hpp"
#include "anchorlab/nn/rng.hpp"

namespace anchorlab::data {

inline constexpr int kChunkLength = 5;

enum class Split { kTrain, kEval };
std::string split_name(Split s);
Split split_from_name(const std::string& name);

// Read-only after loading; samplers hold pointers into it.
struct EpisodeStore {
  std::vector<Episode> episodes;
  std::vector<Split> splits;

  void add(Episode ep, Split split);
  std::vector<const Episode*> select(Split split) const;
  std::size_t steps(Split split) const;
};

// Frames point into the store's episodes.
struct Sample {
  const Episode* episode = nullptr;
  int step = 0;
  std::vector<const sim::Frame*> context;
  const sim::Frame* current = nullptr;
  const sim::Frame* anchor = nullptr;
  std::vector<std::int32_t> tokens;
  StateVec proprio{};                // normalized
  std::vector<ActionVec> chunk;      // normalized, length = horizon
};

// Chunk a_i..a_{i+H-1}; steps past the end repeat the final action.
Sample make_sample(const Episode& ep, int step, ContextMode mode, const NormStats& stats, int horizon = kChunkLength);

// Uniform over (episode, step) pairs of the split. Throws UsageError when the
// split holds no steps.
std::vector<Sample> sample_batch(const EpisodeStore& store, Split split, int batch_size, nn::RngStream& rng,
                                 ContextMode mode, const NormStats& stats, int horizon = kChunkLength);

// Draws only the flat (episode, step) positions; exposed for distribution tests.
std::vector<std::pair<int, int>> sample_positions(const EpisodeStore& store, Split split, int batch_size,
                                                  nn::RngStream& rng);

}  // namespace anchorlab::data
