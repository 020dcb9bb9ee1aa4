#pragma once

#include <vector>

namespace anchorlab::policy {

// Linear-beta DDPM schedule over levels 1..T. Level 0 means "clean" (alpha_bar = 1).
struct DiffusionSchedule {
  int levels = 100;
  std::vector<double> betas;       // betas[t-1]
  std::vector<double> alpha_bars;  // alpha_bars[t-1] = prod_{s<=t} (1 - beta_s)

  double alpha_bar(int t) const;  // t in [0, levels]
};

DiffusionSchedule make_schedule(int levels = 100, double beta_start = 1e-4, double beta_end = 0.02);

// K evenly strided levels, descending: T, T - T/K, ..., T/K.
std::vector<int> ddim_levels(const DiffusionSchedule& s, int k);

// One deterministic DDIM (eta = 0) update from level t to level t_prev.
double ddim_update(double x_t, double eps_hat, double alpha_bar_t, double alpha_bar_prev);

}  // namespace anchorlab::policy
