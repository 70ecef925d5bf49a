// Copyright 2026 The ddpolab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ddpolab {

/// One named numeric check against a threshold.
struct CheckResult {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  /// True when `value` must not exceed the threshold, false when it must reach it.
  bool upper_bound = true;

  bool passed() const { return upper_bound ? value < threshold : value >= threshold; }
};

bool all_passed(const std::vector<CheckResult>& results);

/// Taped gradients of small MLP losses (both activations) against central
/// differences, one model per seed. Reports the worst relative error per loss.
std::vector<CheckResult> autodiff_checks(int seeds);

/// Taped gradients of the denoising loss and of the per-step Gaussian
/// log-likelihood of sampled trajectories on tiny denoisers, one per seed.
std::vector<CheckResult> ddpm_checks(int seeds);

struct EstimatorCheckOptions {
  std::uint64_t seed = 1;
  std::size_t pretrain_steps = 500;
  /// Rollouts per finite-difference side.
  std::size_t fd_samples = 4000;
  std::size_t sf_batches = 200;
  std::size_t sf_batch_size = 1000;
  double sigmas = 3.0;
  double required_agreement = 0.95;
  int workers = 1;
};

/// Score-function gradient of the expected target-distance reward on a
/// 278-parameter, 4-step denoiser versus a common-random-numbers
/// finite-difference oracle. The value is the fraction of components that
/// agree within `sigmas` combined standard errors.
CheckResult estimator_check(const EstimatorCheckOptions& options);

}  // namespace ddpolab
