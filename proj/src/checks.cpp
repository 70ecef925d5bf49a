// Copyright 2026 The ddpolab Authors
// SPDX-License-Identifier: Apache-2.0

#include "ddpolab/checks.hpp"

#include <algorithm>

#include "ddpolab/algorithms.hpp"
#include "ddpolab/data.hpp"
#include "ddpolab/mlp.hpp"
#include "ddpolab/oracle.hpp"

namespace ddpolab {

bool all_passed(const std::vector<CheckResult>& results) {
  return std::all_of(results.begin(), results.end(), [](const CheckResult& r) { return r.passed(); });
}

namespace {

constexpr double kGradTolerance = 1e-4;
constexpr double kFdStep = 1e-5;

DenoiserSpec tiny_spec(std::uint64_t seed) {
  DenoiserSpec spec;
  spec.data_dim = 2;
  spec.num_contexts = 1 + seed % 3;
  spec.hidden = {6 + seed % 4};
  spec.activation = seed % 2 == 0 ? Activation::kSilu : Activation::kTanh;
  spec.steps = 3 + static_cast<int>(seed % 4);
  return spec;
}

}  // namespace

std::vector<CheckResult> autodiff_checks(int seeds) {
  double worst_sq = 0.0;
  double worst_lp = 0.0;
  for (int i = 0; i < seeds; ++i) {
    const auto seed = static_cast<std::uint64_t>(i);
    MlpArch arch;
    arch.layers = {3, 5, 4, 2};
    arch.activation = i % 2 == 0 ? Activation::kSilu : Activation::kTanh;
    const ParamStore params = init_mlp(arch, seed);
    StreamRng rng(seed, static_cast<std::uint64_t>(StreamTag::kOracle));
    Tensor x = Tensor::matrix(4, 3);
    Tensor y = Tensor::matrix(4, 2);
    rng.fill_normal(x.values());
    rng.fill_normal(y.values());
    const ad::TracedScalarFn squared = [&](ad::Tape& tape, std::span<const ad::Var> leaves) {
      return ad::mean(ad::square(ad::sub(mlp_forward(leaves, tape.constant(x), arch), tape.constant(y))));
    };
    // Smooth composite touching exp/log/slicing/concatenation.
    const ad::TracedScalarFn composite = [&](ad::Tape& tape, std::span<const ad::Var> leaves) {
      ad::Var out = mlp_forward(leaves, tape.constant(x), arch);
      ad::Var a = ad::slice_cols(out, 0, 1);
      ad::Var b = ad::slice_cols(out, 1, 2);
      const ad::Var parts[] = {ad::exp(ad::scale(a, 0.5)), ad::log(ad::add_scalar(ad::square(b), 1.0))};
      ad::Var joined = ad::concat_cols(parts);
      return ad::sum(ad::sum_rows(ad::mul(joined, tape.constant(y))));
    };
    worst_sq = std::max(worst_sq, ad::grad_check(squared, params, kFdStep).max_rel_error);
    worst_lp = std::max(worst_lp, ad::grad_check(composite, params, kFdStep).max_rel_error);
  }
  return {{"mlp squared loss", worst_sq, kGradTolerance, true},
          {"mlp composite loss", worst_lp, kGradTolerance, true}};
}

std::vector<CheckResult> ddpm_checks(int seeds) {
  double worst_loss = 0.0;
  double worst_logp = 0.0;
  for (int i = 0; i < seeds; ++i) {
    const auto seed = static_cast<std::uint64_t>(i);
    const DenoiserSpec spec = tiny_spec(seed);
    const NoiseSchedule s =
        make_schedule(spec.steps, default_beta_min(spec.steps), default_beta_max(spec.steps));
    GuidanceConfig g;
    const ParamStore params = init_denoiser(spec, seed);
    const DdpmBatch batch = sample_data_batch(DataDomain::kPoints, spec.num_contexts, 6, seed, 0);
    const DdpmPhase phase = i % 2 == 0 ? DdpmPhase::kPretrain : DdpmPhase::kFinetune;
    const ad::TracedScalarFn loss = [&](ad::Tape&, std::span<const ad::Var> leaves) {
      StreamRng rng(seed, static_cast<std::uint64_t>(StreamTag::kDdpmLoss));
      return ddpm_loss(leaves, spec, batch, s, g, phase, rng);
    };
    worst_loss = std::max(worst_loss, ad::grad_check(loss, params, kFdStep).max_rel_error);

    const RolloutBatch rollouts =
        collect_trajectories(params, spec, s, g, ContextSampler{spec.num_contexts, -1}, 3,
                             RolloutOptions{seed, 0, 0, 1, true});
    std::vector<std::size_t> rows(rollouts.size());
    for (std::size_t r = 0; r < rows.size(); ++r) rows[r] = r;
    const ad::TracedScalarFn logp = [&](ad::Tape&, std::span<const ad::Var> leaves) {
      std::optional<ad::Var> total;
      for (auto& [k, v] : recompute_logps(leaves, spec, s, g.weight, rollouts, rows)) {
        total = total ? *total + ad::sum(v) : ad::sum(v);
      }
      return *total;
    };
    worst_logp = std::max(worst_logp, ad::grad_check(logp, params, kFdStep).max_rel_error);
  }
  return {{"denoising loss", worst_loss, kGradTolerance, true},
          {"trajectory log-likelihood", worst_logp, kGradTolerance, true}};
}

CheckResult estimator_check(const EstimatorCheckOptions& o) {
  DenoiserSpec spec;
  spec.data_dim = 2;
  spec.num_contexts = 1;
  spec.hidden = {12, 12};
  spec.activation = Activation::kTanh;
  spec.steps = 4;
  const NoiseSchedule s = make_schedule(4, default_beta_min(4), default_beta_max(4));
  GuidanceConfig g;
  PretrainConfig pc;
  pc.steps = o.pretrain_steps;
  pc.seed = o.seed;
  const ParamStore params =
      pretrain_ddpm(init_denoiser(spec, o.seed), spec, s, g, DataDomain::kPoints, pc);

  RewardSpec rs;
  rs.targets = {0.5, -0.3};
  const auto reward = make_reward(rs);
  const ContextSampler contexts{1, -1};
  const SampledObjective objective =
      rollout_objective(spec, s, g.weight, *reward, contexts, o.workers);

  FiniteDiffOptions fd_opts;
  fd_opts.workers = o.workers;
  const OracleReport fd = finite_diff_policy_gradient(objective, params, o.fd_samples,
                                                      derive_stream({o.seed, 1}), fd_opts);
  ScoreFunctionOptions sf_opts;
  sf_opts.batches = o.sf_batches;
  sf_opts.batch_size = o.sf_batch_size;
  sf_opts.baseline = expected_reward_mc(objective, params, 20000, derive_stream({o.seed, 2})).mean;
  sf_opts.estimator.workers = o.workers;
  const OracleReport sf = score_function_estimate(params, spec, s, g.weight, *reward, contexts,
                                                  derive_stream({o.seed, 3}), sf_opts);
  return {"score-function vs finite differences (agreement)",
          compare_gradients(sf.estimate, fd, o.sigmas, sf.std_error), o.required_agreement, false};
}

}  // namespace ddpolab
