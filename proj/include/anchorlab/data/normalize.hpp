#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "anchorlab/data/episode.hpp"

namespace anchorlab::data {

// q01/q99 statistics for one group of dimensions.
struct QuantileStats {
  std::vector<std::string> labels;
  std::vector<double> q01;
  std::vector<double> q99;
  std::vector<bool> degenerate;

  std::size_t dims() const { return q01.size(); }
  bool operator==(const QuantileStats&) const = default;
};

struct NormStats {
  QuantileStats action;
  QuantileStats state;
  bool operator==(const NormStats&) const = default;
};

// Percentile with linear interpolation between order statistics
// (position q * (n - 1) in the sorted sample).
double percentile(std::vector<double> values, double q);

QuantileStats compute_quantiles(const std::vector<std::vector<double>>& columns, std::vector<std::string> labels);

// Needs at least 100 steps in total; throws UsageError otherwise.
NormStats compute_norm_stats(std::span<const Episode* const> episodes);
NormStats compute_norm_stats(const std::vector<Episode>& episodes);

// clip(2 * (x - q01) / (q99 - q01) - 1, -1, 1); degenerate dims map to 0.
// Throws DataError on NaN input or dimension mismatch.
std::vector<double> normalize(std::span<const double> x, const QuantileStats& stats);
// Inverse on [-1, 1]; degenerate dims map back to q01.
std::vector<double> denormalize(std::span<const double> x, const QuantileStats& stats);

nlohmann::json to_json(const NormStats& s);
NormStats norm_stats_from_json(const nlohmann::json& j);

}  // namespace anchorlab::data
