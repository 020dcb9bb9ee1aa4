#include "anchorlab/policy/diffusion.hpp"

#include <cmath>

#include "anchorlab/common/errors.hpp"

namespace anchorlab::policy {

double DiffusionSchedule::alpha_bar(int t) const {
  if (t < 0 || t > levels) throw UsageError("diffusion level " + std::to_string(t) + " outside [0, " + std::to_string(levels) + "]");
  return t == 0 ? 1.0 : alpha_bars[static_cast<std::size_t>(t - 1)];
}

DiffusionSchedule make_schedule(int levels, double beta_start, double beta_end) {
  if (levels < 2) throw ConfigError("diffusion schedule needs at least 2 levels");
  DiffusionSchedule s;
  s.levels = levels;
  double prod = 1.0;
  for (int t = 0; t < levels; ++t) {
    const double beta = beta_start + (beta_end - beta_start) * t / (levels - 1);
    prod *= 1.0 - beta;
    s.betas.push_back(beta);
    s.alpha_bars.push_back(prod);
  }
  return s;
}

std::vector<int> ddim_levels(const DiffusionSchedule& s, int k) {
  if (k <= 0 || k > s.levels || s.levels % k != 0)
    throw ConfigError("inference steps " + std::to_string(k) + " must divide " + std::to_string(s.levels));
  std::vector<int> out;
  const int stride = s.levels / k;
  for (int t = s.levels; t > 0; t -= stride) out.push_back(t);
  return out;
}

double ddim_update(double x_t, double eps_hat, double alpha_bar_t, double alpha_bar_prev) {
  const double x0 = (x_t - std::sqrt(1.0 - alpha_bar_t) * eps_hat) / std::sqrt(alpha_bar_t);
  return std::sqrt(alpha_bar_prev) * x0 + std::sqrt(1.0 - alpha_bar_prev) * eps_hat;
}

}  // namespace anchorlab::policy
