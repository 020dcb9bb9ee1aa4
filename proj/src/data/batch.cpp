#include "anchorlab/data/batch.hpp"

#include <algorithm>

#include "anchorlab/common/errors.hpp"
#include "anchorlab/data/vocab.hpp"

namespace anchorlab::data {

std::string split_name(Split s) { return s == Split::kTrain ? "train" : "eval"; }

Split split_from_name(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "eval") return Split::kEval;
  throw DataError("unknown split tag: " + name);
}

void EpisodeStore::add(Episode ep, Split split) {
  validate(ep);
  episodes.push_back(std::move(ep));
  splits.push_back(split);
}

std::vector<const Episode*> EpisodeStore::select(Split split) const {
  std::vector<const Episode*> out;
  for (std::size_t i = 0; i < episodes.size(); ++i)
    if (splits[i] == split) out.push_back(&episodes[i]);
  return out;
}

std::size_t EpisodeStore::steps(Split split) const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < episodes.size(); ++i)
    if (splits[i] == split) n += episodes[i].size();
  return n;
}

Sample make_sample(const Episode& ep, int step, ContextMode mode, const NormStats& stats, int horizon) {
  const int n = static_cast<int>(ep.size());
  if (horizon <= 0) throw UsageError("chunk horizon must be positive");
  Sample s;
  s.episode = &ep;
  s.step = step;
  for (int idx : select_context(n, step, mode)) s.context.push_back(&ep.frames[idx]);
  s.current = &ep.frames[step];
  s.anchor = &ep.frames[0];
  s.tokens = tokenize(ep.instruction);

  const auto& st = ep.states[step];
  const std::vector<double> raw_state(st.begin(), st.end());
  const auto ns = normalize(raw_state, stats.state);
  for (int d = 0; d < sim::kStateDim; ++d) s.proprio[d] = static_cast<float>(ns[d]);

  for (int k = 0; k < horizon; ++k) {
    const auto& a = ep.actions[std::min(step + k, n - 1)];
    const std::vector<double> raw(a.begin(), a.end());
    const auto na = normalize(raw, stats.action);
    ActionVec v{};
    for (int d = 0; d < sim::kActionDim; ++d) v[d] = static_cast<float>(na[d]);
    s.chunk.push_back(v);
  }
  return s;
}

std::vector<std::pair<int, int>> sample_positions(const EpisodeStore& store, Split split, int batch_size,
                                                  nn::RngStream& rng) {
  std::vector<int> ids;
  std::vector<std::size_t> ends;
  std::size_t total = 0;
  for (std::size_t i = 0; i < store.episodes.size(); ++i) {
    if (store.splits[i] != split || store.episodes[i].size() == 0) continue;
    total += store.episodes[i].size();
    ids.push_back(static_cast<int>(i));
    ends.push_back(total);
  }
  if (total == 0) throw UsageError("split '" + split_name(split) + "' holds no steps");
  std::vector<std::pair<int, int>> out;
  out.reserve(static_cast<std::size_t>(std::max(batch_size, 0)));
  for (int b = 0; b < batch_size; ++b) {
    const std::size_t flat = rng.uniform_int(total);
    const auto it = std::upper_bound(ends.begin(), ends.end(), flat);
    const std::size_t k = static_cast<std::size_t>(it - ends.begin());
    const std::size_t begin = k == 0 ? 0 : ends[k - 1];
    out.emplace_back(ids[k], static_cast<int>(flat - begin));
  }
  return out;
}

std::vector<Sample> sample_batch(const EpisodeStore& store, Split split, int batch_size, nn::RngStream& rng,
                                 ContextMode mode, const NormStats& stats, int horizon) {
  std::vector<Sample> out;
  for (auto [e, i] : sample_positions(store, split, batch_size, rng))
    out.push_back(make_sample(store.episodes[e], i, mode, stats, horizon));
  return out;
}

}  // namespace anchorlab::data
