// Copyright 2026 The ddpolab Authors
// SPDX-License-Identifier: Apache-2.0

#include "ddpolab/oracle.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

#include "ddpolab/error.hpp"
#include "ddpolab/parallel.hpp"

namespace ddpolab {

SampledObjective rollout_objective(const DenoiserSpec& spec, const NoiseSchedule& s, double weight,
                                   const RewardFunction& reward, ContextSampler contexts,
                                   int workers) {
  return [spec, s, weight, &reward, contexts, workers](const ParamStore& params,
                                                       std::uint64_t stream_seed, std::size_t n) {
    GuidanceConfig g;
    g.weight = weight;
    RolloutOptions opt{stream_seed, 0, 0, workers, false};
    RolloutBatch batch = collect_trajectories(params, spec, s, g, contexts, n, opt);
    if (batch.invalid_count > 0) {
      throw NumericalError("objective: " + std::to_string(batch.invalid_count) +
                           " rollouts produced non-finite states");
    }
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& traj = batch.trajectories[i];
      values[i] = reward(traj.x0(), traj.context);
      if (!std::isfinite(values[i])) throw NumericalError("objective: non-finite reward");
    }
    return values;
  };
}

MonteCarloEstimate mc_summary(std::span<const double> values) {
  MonteCarloEstimate e;
  e.samples = values.size();
  if (values.empty()) return e;
  double sum = 0.0;
  for (double v : values) sum += v;
  e.mean = sum / static_cast<double>(values.size());
  if (values.size() < 2) return e;
  double ss = 0.0;
  for (double v : values) ss += (v - e.mean) * (v - e.mean);
  const double n = static_cast<double>(values.size());
  e.std_error = std::sqrt(ss / (n - 1.0) / n);
  return e;
}

MonteCarloEstimate expected_reward_mc(const SampledObjective& objective, const ParamStore& params,
                                      std::size_t n, std::uint64_t seed) {
  if (n < 2) throw DomainError("expected_reward_mc: need at least two samples");
  const auto values = objective(params, seed, n);
  if (values.size() != n) throw ShapeError("expected_reward_mc: objective returned wrong count");
  return mc_summary(values);
}

OracleReport finite_diff_policy_gradient(const SampledObjective& objective, const ParamStore& params,
                                         std::size_t n, std::uint64_t seed,
                                         const FiniteDiffOptions& options) {
  if (!(options.step > 0.0)) throw DomainError("finite_diff_policy_gradient: step must be positive");
  if (n < 2) throw DomainError("finite_diff_policy_gradient: need at least two samples");
  const std::size_t p = params.total_size();
  OracleReport report;
  report.estimate.assign(p, 0.0);
  report.std_error.assign(p, 0.0);
  report.samples = n;
  const double h = options.step;
  parallel_for(p, options.workers, [&](std::size_t i) {
    const auto oracle_tag = static_cast<std::uint64_t>(StreamTag::kOracle);
    const std::uint64_t seed_plus =
        options.common_random_numbers ? seed : derive_stream({oracle_tag, seed, i, 0});
    const std::uint64_t seed_minus =
        options.common_random_numbers ? seed : derive_stream({oracle_tag, seed, i, 1});
    ParamStore plus = params;
    ParamStore minus = params;
    plus.flat(i) += h;
    minus.flat(i) -= h;
    const auto vp = objective(plus, seed_plus, n);
    const auto vm = objective(minus, seed_minus, n);
    if (vp.size() != n || vm.size() != n) {
      throw ShapeError("finite_diff_policy_gradient: objective returned wrong count");
    }
    if (options.common_random_numbers) {
      std::vector<double> diff(n);
      for (std::size_t j = 0; j < n; ++j) diff[j] = (vp[j] - vm[j]) / (2.0 * h);
      const auto e = mc_summary(diff);
      report.estimate[i] = e.mean;
      report.std_error[i] = e.std_error;
    } else {
      const auto ep = mc_summary(vp);
      const auto em = mc_summary(vm);
      report.estimate[i] = (ep.mean - em.mean) / (2.0 * h);
      report.std_error[i] = std::hypot(ep.std_error, em.std_error) / (2.0 * h);
    }
    if (!std::isfinite(report.estimate[i])) {
      throw NumericalError("finite_diff_policy_gradient: non-finite objective");
    }
  });
  return report;
}

double compare_gradients(std::span<const double> candidate, const OracleReport& oracle, double k,
                         std::span<const double> candidate_stderr) {
  if (candidate.size() != oracle.size() || oracle.std_error.size() != oracle.size()) {
    throw ShapeError("compare_gradients: dimension mismatch");
  }
  if (!candidate_stderr.empty() && candidate_stderr.size() != candidate.size()) {
    throw ShapeError("compare_gradients: candidate stderr dimension mismatch");
  }
  if (candidate.empty()) return 1.0;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < candidate.size(); ++i) {
    const double se = candidate_stderr.empty() ? oracle.std_error[i]
                                               : std::hypot(oracle.std_error[i], candidate_stderr[i]);
    if (std::abs(candidate[i] - oracle.estimate[i]) <= k * se) ++ok;
  }
  return static_cast<double>(ok) / static_cast<double>(candidate.size());
}

void write_oracle_csv(std::ostream& out, const OracleReport& oracle,
                      std::span<const double> candidate, std::span<const double> candidate_stderr) {
  if (candidate.size() != oracle.size()) throw ShapeError("write_oracle_csv: dimension mismatch");
  out << "component,oracle,stderr,candidate,z\n";
  char buf[160];
  for (std::size_t i = 0; i < oracle.size(); ++i) {
    const double se = candidate_stderr.empty() ? oracle.std_error[i]
                                               : std::hypot(oracle.std_error[i], candidate_stderr[i]);
    const double z = (candidate[i] - oracle.estimate[i]) / se;
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.6g\n", i, oracle.estimate[i],
                  oracle.std_error[i], candidate[i], z);
    out << buf;
  }
}

OracleReport score_function_estimate(const ParamStore& params, const DenoiserSpec& spec,
                                     const NoiseSchedule& s, double weight,
                                     const RewardFunction& reward, ContextSampler contexts,
                                     std::uint64_t seed, const ScoreFunctionOptions& options) {
  if (options.batches < 2) throw DomainError("score_function_estimate: need at least two batches");
  GuidanceConfig g;
  g.weight = weight;
  const PolicyModel model{&spec, &s, weight};
  const std::size_t p = params.total_size();
  std::vector<std::vector<double>> per_batch(options.batches);
  for (std::size_t b = 0; b < options.batches; ++b) {
    RolloutOptions opt{seed, b, 0, options.estimator.workers, true};
    RolloutBatch batch = collect_trajectories(params, spec, s, g, contexts, options.batch_size, opt);
    score_batch(batch, reward, options.estimator.workers);
    for (auto& traj : batch.trajectories) {
      traj.advantage = *traj.reward - options.baseline;
      traj.advantage_scale = 1.0;
    }
    per_batch[b] = ddpo_sf_gradient(batch, params, model, options.estimator, &reward).flatten();
  }
  OracleReport report;
  report.samples = options.batches * options.batch_size;
  report.estimate.assign(p, 0.0);
  report.std_error.assign(p, 0.0);
  std::vector<double> column(options.batches);
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t b = 0; b < options.batches; ++b) column[b] = per_batch[b][i];
    const auto e = mc_summary(column);
    report.estimate[i] = e.mean;
    report.std_error[i] = e.std_error;
  }
  return report;
}

}  // namespace ddpolab
