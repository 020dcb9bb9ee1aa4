#include "anchorlab/data/normalize.hpp"

#include <algorithm>
#include <cmath>

#include "anchorlab/common/errors.hpp"

namespace anchorlab::data {

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw UsageError("percentile of an empty sample");
  if (q < 0.0 || q > 1.0) throw UsageError("percentile level must be in [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

QuantileStats compute_quantiles(const std::vector<std::vector<double>>& columns, std::vector<std::string> labels) {
  if (labels.size() != columns.size()) throw UsageError("label count does not match column count");
  QuantileStats st;
  st.labels = std::move(labels);
  for (const auto& col : columns) {
    const double lo = percentile(col, 0.01);
    const double hi = percentile(col, 0.99);
    st.q01.push_back(lo);
    st.q99.push_back(hi);
    st.degenerate.push_back(hi - lo <= 0.0);
  }
  return st;
}

NormStats compute_norm_stats(std::span<const Episode* const> episodes) {
  std::vector<std::vector<double>> acts(sim::kActionDim), states(sim::kStateDim);
  for (const Episode* ep : episodes) {
    for (std::size_t i = 0; i < ep->size(); ++i) {
      for (int d = 0; d < sim::kActionDim; ++d) acts[d].push_back(ep->actions[i][d]);
      for (int d = 0; d < sim::kStateDim; ++d) states[d].push_back(ep->states[i][d]);
    }
  }
  if (acts[0].size() < 100)
    throw UsageError("normalization needs at least 100 training steps, got " + std::to_string(acts[0].size()));
  NormStats s;
  s.action = compute_quantiles(acts, {"dx", "dy", "dtheta", "gripper"});
  s.state = compute_quantiles(states, {"x", "y", "theta", "open"});
  return s;
}

NormStats compute_norm_stats(const std::vector<Episode>& episodes) {
  std::vector<const Episode*> ptrs;
  for (const auto& e : episodes) ptrs.push_back(&e);
  return compute_norm_stats(std::span<const Episode* const>(ptrs));
}

namespace {

void check_dims(std::span<const double> x, const QuantileStats& stats) {
  if (x.size() != stats.dims())
    throw DataError("dimension mismatch: got " + std::to_string(x.size()) + ", stats have " +
                    std::to_string(stats.dims()));
  for (double v : x)
    if (std::isnan(v)) throw DataError("NaN in normalization input");
}

}  // namespace

std::vector<double> normalize(std::span<const double> x, const QuantileStats& stats) {
  check_dims(x, stats);
  std::vector<double> out(x.size());
  for (std::size_t d = 0; d < x.size(); ++d) {
    if (stats.degenerate[d]) {
      out[d] = 0.0;
      continue;
    }
    const double v = 2.0 * (x[d] - stats.q01[d]) / (stats.q99[d] - stats.q01[d]) - 1.0;
    out[d] = std::clamp(v, -1.0, 1.0);
  }
  return out;
}

std::vector<double> denormalize(std::span<const double> x, const QuantileStats& stats) {
  check_dims(x, stats);
  std::vector<double> out(x.size());
  for (std::size_t d = 0; d < x.size(); ++d) {
    if (stats.degenerate[d]) {
      out[d] = stats.q01[d];
      continue;
    }
    out[d] = (x[d] + 1.0) * 0.5 * (stats.q99[d] - stats.q01[d]) + stats.q01[d];
  }
  return out;
}

namespace {

nlohmann::json group_json(const QuantileStats& q) {
  return {{"labels", q.labels}, {"q01", q.q01}, {"q99", q.q99}, {"degenerate", q.degenerate}};
}

QuantileStats group_from_json(const nlohmann::json& j) {
  QuantileStats q;
  q.labels = j.at("labels").get<std::vector<std::string>>();
  q.q01 = j.at("q01").get<std::vector<double>>();
  q.q99 = j.at("q99").get<std::vector<double>>();
  q.degenerate = j.at("degenerate").get<std::vector<bool>>();
  const std::size_t n = q.labels.size();
  if (q.q01.size() != n || q.q99.size() != n || q.degenerate.size() != n)
    throw DataError("normalization stats have inconsistent lengths");
  for (std::size_t d = 0; d < n; ++d)
    if (q.q01[d] > q.q99[d]) throw DataError("normalization stats have q01 > q99 for " + q.labels[d]);
  return q;
}

}  // namespace

nlohmann::json to_json(const NormStats& s) { return {{"action", group_json(s.action)}, {"state", group_json(s.state)}}; }

NormStats norm_stats_from_json(const nlohmann::json& j) {
  try {
    return NormStats{group_from_json(j.at("action")), group_from_json(j.at("state"))};
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed normalization stats: ") + e.what());
  }
}

}  // namespace anchorlab::data
