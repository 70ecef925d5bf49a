// Copyright 2026 The ddpolab Authors
// SPDX-License-Identifier: Apache-2.0

#include "ddpolab/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ddpolab/error.hpp"

namespace ddpolab {

std::size_t NoiseSchedule::index(int t) const {
  if (t < 1 || t > steps()) {
    throw DomainError("timestep " + std::to_string(t) + " outside 1.." + std::to_string(steps()));
  }
  return static_cast<std::size_t>(t - 1);
}

NoiseSchedule make_schedule(int steps, double beta_min, double beta_max) {
  if (steps < 1) throw DomainError("schedule needs at least one step");
  if (!(beta_min > 0.0) || !(beta_min <= beta_max) || !(beta_max < 1.0)) {
    throw DomainError("schedule requires 0 < beta_min <= beta_max < 1");
  }
  NoiseSchedule s;
  const auto n = static_cast<std::size_t>(steps);
  s.betas_.resize(n);
  s.alphas_.resize(n);
  s.alpha_bars_.resize(n);
  s.sigmas_.resize(n);
  double abar = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double frac = n == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1);
    const double beta = beta_min + (beta_max - beta_min) * frac;
    const double prev = abar;
    abar *= 1.0 - beta;
    s.betas_[i] = beta;
    s.alphas_[i] = 1.0 - beta;
    s.alpha_bars_[i] = abar;
    s.sigmas_[i] = std::sqrt(beta * (1.0 - prev) / (1.0 - abar));
    if (!(abar < prev) || !(abar > 0.0) || !std::isfinite(s.sigmas_[i])) {
      throw DomainError("schedule degenerates at t=" + std::to_string(i + 1));
    }
  }
  return s;
}

double default_beta_min(int steps) { return std::min(0.1 / steps, 0.5); }
double default_beta_max(int steps) { return std::min(20.0 / steps, 0.5); }

}  // namespace ddpolab
