#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "anchorlab/nn/graph.hpp"
#include "anchorlab/nn/rng.hpp"

namespace anchorlab::nn {

struct GradcheckOptions {
  double h = 1e-3;
  int coordinates = 64;
  std::uint64_t seed = 0;
};

struct GradcheckResult {
  double max_rel_error = 0.0;
  int coordinates = 0;
  std::string worst_param;
  std::int64_t worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Compares reverse-mode gradients computed in precision T against central
// finite differences (five-point stencil, O(h^4)) evaluated in double precision.
//
// `f` must be callable as f(Graph<U>&) -> Var<U> for U = T and U = double,
// read parameters only through g.param(), and be deterministic. Returns the
// max over sampled coordinates of |a - n| / max(1e-8, |a| + |n|).
template <class T, class F>
GradcheckResult gradcheck(F&& f, const ParamStore& params, const GradcheckOptions& opt = {}) {
  const auto typed = store_cast<T>(params);
  {
    Graph<T> g1(typed);
    Graph<T> g2(typed);
    Var<T> l1 = f(g1);
    Var<T> l2 = f(g2);
    if (l1.value().size() != 1) throw OracleError("gradcheck: function is not scalar, shape " + shape_str(l1.shape()));
    if (l1.value().data != l2.value().data) throw OracleError("gradcheck: two forward passes differ (non-deterministic f)");
  }
  Graph<T> g(typed);
  Var<T> loss = f(g);
  g.backward(loss);
  const auto grads = g.param_grads();

  std::vector<std::pair<std::string, std::int64_t>> coords;
  std::int64_t total = params.total_elements();
  if (total == 0) throw OracleError("gradcheck: empty parameter store");
  std::vector<std::int64_t> picks;
  if (total <= opt.coordinates) {
    for (std::int64_t i = 0; i < total; ++i) picks.push_back(i);
  } else {
    RngStream rng(opt.seed, Stream::kGradcheck);
    while (static_cast<int>(picks.size()) < opt.coordinates) {
      auto c = static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(total)));
      if (std::find(picks.begin(), picks.end(), c) == picks.end()) picks.push_back(c);
    }
    std::sort(picks.begin(), picks.end());
  }
  {
    std::int64_t base = 0;
    std::size_t p = 0;
    for (const auto& [name, t] : params) {
      while (p < picks.size() && picks[p] < base + t.size()) coords.emplace_back(name, picks[p++] - base);
      base += t.size();
    }
  }

  auto shadow = store_cast<double>(params);
  auto eval = [&]() {
    Graph<double> gd(shadow);
    return f(gd).value().item();
  };
  GradcheckResult res;
  res.coordinates = static_cast<int>(coords.size());
  for (const auto& [name, idx] : coords) {
    double& slot = shadow.at(name).data[static_cast<std::size_t>(idx)];
    const double orig = slot;
    auto at = [&](double offset) {
      slot = orig + offset;
      return eval();
    };
    const double d1 = at(opt.h) - at(-opt.h);
    const double d2 = at(2 * opt.h) - at(-2 * opt.h);
    slot = orig;
    const double numeric = (8.0 * d1 - d2) / (12.0 * opt.h);
    const double analytic = static_cast<double>(grads.at(name).data[static_cast<std::size_t>(idx)]);
    const double rel = std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
    if (res.worst_index < 0 || rel > res.max_rel_error) {
      res.max_rel_error = rel;
      res.worst_param = name;
      res.worst_index = idx;
      res.worst_analytic = analytic;
      res.worst_numeric = numeric;
    }
  }
  return res;
}

}  // namespace anchorlab::nn
