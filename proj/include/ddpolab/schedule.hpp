// Copyright 2026 The ddpolab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

namespace ddpolab {

/// Per-timestep noise tables, indexed by t in 1..T.
///
/// sigma is the reverse-process standard deviation
/// sqrt(beta_t (1 - abar_{t-1}) / (1 - abar_t)); with abar_0 = 1 it is exactly
/// zero at t = 1, so the last reverse step emits the predicted mean.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;

  int steps() const { return static_cast<int>(betas_.size()); }

  double beta(int t) const { return betas_[index(t)]; }
  double alpha(int t) const { return alphas_[index(t)]; }
  /// abar_0 is 1.
  double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bars_[index(t)]; }
  double sigma(int t) const { return sigmas_[index(t)]; }
  bool stochastic(int t) const { return sigma(t) > 0.0; }

  const std::vector<double>& betas() const { return betas_; }
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }
  const std::vector<double>& sigmas() const { return sigmas_; }

 private:
  friend NoiseSchedule make_schedule(int, double, double);
  std::size_t index(int t) const;

  std::vector<double> betas_, alphas_, alpha_bars_, sigmas_;
};

/// Linear beta from beta_min (t = 1) to beta_max (t = T).
NoiseSchedule make_schedule(int steps, double beta_min, double beta_max);

/// Linear range equivalent to the classic 1000-step 1e-4..0.02 schedule
/// compressed to `steps` steps, capped below 1.
double default_beta_min(int steps);
double default_beta_max(int steps);

}  // namespace ddpolab
