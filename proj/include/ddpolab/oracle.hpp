// Copyright 2026 The ddpolab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <span>
#include <vector>

#include "ddpolab/algorithms.hpp"
#include "ddpolab/mdp.hpp"
#include "ddpolab/param_store.hpp"
#include "ddpolab/rewards.hpp"

namespace ddpolab {

/// Per-sample values of a stochastic objective. Sample j must depend only on
/// (params, stream_seed, j), so two calls with the same seed share noise.
using SampledObjective =
    std::function<std::vector<double>(const ParamStore& params, std::uint64_t stream_seed,
                                      std::size_t n)>;

/// Terminal rewards of n rollouts of the guided network policy. Throws
/// NumericalError if any rollout is invalid.
SampledObjective rollout_objective(const DenoiserSpec& spec, const NoiseSchedule& s, double weight,
                                   const RewardFunction& reward, ContextSampler contexts,
                                   int workers = 1);

struct MonteCarloEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t samples = 0;
};

/// Sample mean and standard error (n - 1 denominator).
MonteCarloEstimate mc_summary(std::span<const double> values);

MonteCarloEstimate expected_reward_mc(const SampledObjective& objective, const ParamStore& params,
                                      std::size_t n, std::uint64_t seed);

struct OracleReport {
  std::vector<double> estimate;
  std::vector<double> std_error;
  std::size_t samples = 0;
  /// Set by compare_gradients; NaN until then.
  double agreement = std::numeric_limits<double>::quiet_NaN();

  std::size_t size() const { return estimate.size(); }
};

struct FiniteDiffOptions {
  double step = 1e-3;
  /// Common random numbers: both sides of a difference reuse one stream seed.
  bool common_random_numbers = true;
  int workers = 1;
};

/// Central differences of E[objective] per parameter component.
OracleReport finite_diff_policy_gradient(const SampledObjective& objective, const ParamStore& params,
                                         std::size_t n, std::uint64_t seed,
                                         const FiniteDiffOptions& options = {});

/// Fraction of components with |candidate - oracle| <= k * stderr. When
/// `candidate_stderr` is given the two errors are combined in quadrature.
double compare_gradients(std::span<const double> candidate, const OracleReport& oracle, double k,
                         std::span<const double> candidate_stderr = {});

/// CSV: component,oracle,stderr,candidate,z
void write_oracle_csv(std::ostream& out, const OracleReport& oracle,
                      std::span<const double> candidate,
                      std::span<const double> candidate_stderr = {});

struct ScoreFunctionOptions {
  std::size_t batches = 200;
  std::size_t batch_size = 1000;
  /// Subtracted from every raw reward; any constant keeps the estimate unbiased.
  double baseline = 0.0;
  EstimatorOptions estimator;
};

/// Batch means of the score-function gradient with raw-reward advantages.
/// Batch b collects trajectories under stream round b.
OracleReport score_function_estimate(const ParamStore& params, const DenoiserSpec& spec,
                                     const NoiseSchedule& s, double weight,
                                     const RewardFunction& reward, ContextSampler contexts,
                                     std::uint64_t seed, const ScoreFunctionOptions& options);

}  // namespace ddpolab
