// Copyright 2026 The ddpolab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "ddpolab/autodiff.hpp"
#include "ddpolab/diffusion.hpp"

namespace ddpolab {

/// One denoising rollout viewed as an MDP episode.
///
/// states row k holds x_{T-k}: row 0 is x_T, row T is x_0. The action taken
/// at step k is states row k + 1, so actions alias the states. logps[k] is
/// log p(x_{T-k-1} | x_{T-k}, c); steps with sigma = 0 have no density and
/// store 0.
struct DenoiseTrajectory {
  int context = 0;
  std::uint64_t index = 0;
  Tensor states;
  std::vector<double> logps;
  std::optional<double> reward;
  double advantage = 0.0;
  /// d(advantage)/d(reward); the per-trajectory factor on the reward path.
  double advantage_scale = 1.0;

  int steps() const { return static_cast<int>(states.rows()) - 1; }
  std::span<const double> state(std::size_t k) const { return states.row_span(k); }
  std::span<const double> x0() const { return states.row_span(states.rows() - 1); }
  /// Sum of logps over steps with sigma > 0.
  double total_logp() const;
};

struct RolloutBatch {
  std::vector<DenoiseTrajectory> trajectories;
  /// Hash of the parameters that generated the batch (0 for non-network predictors).
  std::uint64_t theta_snapshot_id = 0;
  int steps = 0;
  std::size_t data_dim = 0;
  std::size_t invalid_count = 0;

  std::size_t size() const { return trajectories.size(); }
};

/// Sum over coordinates of the isotropic Gaussian log-density.
double gaussian_logp(std::span<const double> x, std::span<const double> mu, double sigma);
/// Row-wise version (rows x 1) sharing its arithmetic with the traced one.
Tensor gaussian_logp_rows(const Tensor& x, const Tensor& mu, double sigma);
ad::Var gaussian_logp_rows(const Tensor& x, ad::Var mu, double sigma);

/// Context distribution p(c): uniform over num_contexts, or a fixed id.
struct ContextSampler {
  std::size_t num_contexts = 1;
  int fixed = -1;

  int draw(StreamRng& rng) const;
};

struct RolloutOptions {
  std::uint64_t seed = 0;
  /// Collection round (training iteration); part of every stream key.
  std::uint64_t round = 0;
  /// Global index of the first trajectory; trajectory i uses stream
  /// (seed, round, first_index + i) no matter how work is split.
  std::uint64_t first_index = 0;
  int workers = 1;
  /// When false only x_0 is kept (states has one row) and logps are empty.
  bool keep_states = true;
};

inline constexpr std::size_t kRolloutChunk = 64;

RolloutBatch collect_trajectories(const EpsPredictor& predictor, const NoiseSchedule& s,
                                  std::size_t data_dim, const ContextSampler& contexts,
                                  std::size_t n, const RolloutOptions& options);

/// Samples with the guided network policy; theta_snapshot_id is set.
RolloutBatch collect_trajectories(const ParamStore& params, const DenoiserSpec& spec,
                                  const NoiseSchedule& s, const GuidanceConfig& g,
                                  const ContextSampler& contexts, std::size_t n,
                                  const RolloutOptions& options);

/// Traced log-likelihoods of the stored actions under the leaves' parameters.
/// One (step index k, rows x 1 Var) per stochastic step; rows follow `rows`.
std::vector<std::pair<int, ad::Var>> recompute_logps(std::span<const ad::Var> leaves,
                                                     const DenoiserSpec& spec,
                                                     const NoiseSchedule& s, double weight,
                                                     const RolloutBatch& batch,
                                                     std::span<const std::size_t> rows);

/// Untraced convenience: per-trajectory, per-step logps (0 at sigma = 0).
std::vector<std::vector<double>> recompute_logps(const ParamStore& params,
                                                 const DenoiserSpec& spec,
                                                 const NoiseSchedule& s, double weight,
                                                 const RolloutBatch& batch);

/// Traced model mean at the final (sigma = 0) step: mu_theta(x_1, 1, c), rows x d.
ad::Var final_step_mean(std::span<const ad::Var> leaves, const DenoiserSpec& spec,
                        const NoiseSchedule& s, double weight, const RolloutBatch& batch,
                        std::span<const std::size_t> rows);

/// Terminal reward; every other step's reward is 0, so this is the return.
double trajectory_return(const DenoiseTrajectory& traj);

/// Trajectory dump, little-endian:
///   "DDPOTRAJ1", u32 trajectory count, u32 data dim
///   per trajectory: i32 context id, u32 T, (T+1)*dim f64 states, T f64 logps
void write_trajectory_dump(const std::filesystem::path& path, const RolloutBatch& batch);
RolloutBatch read_trajectory_dump(const std::filesystem::path& path);

}  // namespace ddpolab
