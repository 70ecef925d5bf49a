// Copyright 2026 The ddpolab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ddpolab/data.hpp"
#include "ddpolab/diffusion.hpp"
#include "ddpolab/mdp.hpp"
#include "ddpolab/param_store.hpp"
#include "ddpolab/rewards.hpp"

namespace ddpolab {

// ---------------------------------------------------------------------------
// Reward normalization

/// Per-context running count, mean and sum of squared deviations.
class RewardStats {
 public:
  struct Entry {
    double count = 0.0;
    double mean = 0.0;
    double m2 = 0.0;

    friend bool operator==(const Entry&, const Entry&) = default;
  };

  RewardStats() = default;
  explicit RewardStats(std::size_t num_contexts) : entries_(num_contexts) {}

  std::size_t num_contexts() const { return entries_.size(); }
  const Entry& entry(std::size_t c) const { return entries_.at(c); }
  Entry& entry(std::size_t c) { return entries_.at(c); }
  /// Population variance (m2 / count); 0 for an empty context.
  double variance(std::size_t c) const;

  /// Chan et al. parallel combination of two summaries.
  static Entry combine(const Entry& a, const Entry& b);
  /// Two-pass summary of one group of values.
  static Entry summarize(std::span<const double> values);

  friend bool operator==(const RewardStats&, const RewardStats&) = default;

 private:
  std::vector<Entry> entries_;
};

enum class AdvantageMode { kNormalized, kRaw };

std::string to_string(AdvantageMode m);
AdvantageMode parse_advantage_mode(const std::string& s);

struct Advantages {
  std::vector<double> values;
  /// d(value)/d(own reward) with the statistics held fixed.
  std::vector<double> scales;
};

/// Smallest standard deviation used as a divisor.
inline constexpr double kStdFloor = 1e-8;

/// Folds the batch into `stats` (per context) and returns
/// (r - mean_c) / max(std_c, 1e-8) under the merged statistics. A context
/// whose merged count is 1 gets advantage 0.
Advantages normalize_rewards(std::span<const double> rewards, std::span<const int> contexts,
                             RewardStats& stats);

// ---------------------------------------------------------------------------
// Reward-weighted regression

/// Numerically stable softmax of beta * r over one group.
std::vector<double> softmax_weights(std::span<const double> rewards, double beta);
/// 0/1 weights keeping the top n - floor(p * n) rewards. Ties are broken by a
/// stable sort on (reward, position). Throws on an empty group.
std::vector<double> sparse_weights(std::span<const double> rewards, double percentile);

/// Applies the group rule separately to each context present in `contexts`.
std::vector<double> rwr_weights_exp(std::span<const double> rewards, std::span<const int> contexts,
                                    double beta);
std::vector<double> rwr_weights_sparse(std::span<const double> rewards,
                                       std::span<const int> contexts, double percentile);

// ---------------------------------------------------------------------------
// Optimizer

struct AdamWConfig {
  double lr = 1e-5;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Global-norm clip; <= 0 disables clipping.
  double grad_clip = 1.0;
};

struct AdamWState {
  ParamStore m;
  ParamStore v;
  std::uint64_t step = 0;

  static AdamWState zeros_like(const ParamStore& params);
  friend bool operator==(const AdamWState&, const AdamWState&) = default;
};

/// One AdamW step on loss gradients `grads`. Returns the pre-clip global norm.
double adamw_step(ParamStore& params, const ParamStore& grads, AdamWState& state,
                  const AdamWConfig& config);

// ---------------------------------------------------------------------------
// Policy-gradient estimators

/// Everything the estimators need to rebuild the sampling policy.
struct PolicyModel {
  const DenoiserSpec* spec = nullptr;
  const NoiseSchedule* schedule = nullptr;
  /// Guidance weight of the policy (the one that sampled the batch).
  double weight = 1.0;
};

struct EstimatorOptions {
  int workers = 1;
  /// Adds the reward-gradient term for the deterministic final step.
  bool reward_path_gradient = true;
};

/// Sets each trajectory's reward; parallel over trajectories.
void score_batch(RolloutBatch& batch, const RewardFunction& reward, int workers);

/// Copies advantages and their reward scales onto the trajectories.
void assign_advantages(RolloutBatch& batch, const Advantages& adv);

/// Score-function estimate of the ascent direction of E[advantage]:
///   mean_i A_i sum_t grad log p(x_{t-1} | x_t, c_i)
/// plus, when the final step is deterministic and the reward has a gradient,
///   mean_i scale_i * dr/dx0 * d mu(x_1) / d theta.
/// Throws DomainError if `params` is not the snapshot that collected `batch`.
ParamStore ddpo_sf_gradient(const RolloutBatch& batch, const ParamStore& params,
                            const PolicyModel& model, const EstimatorOptions& options,
                            const RewardFunction* reward = nullptr);

/// One logged term of the clipped surrogate.
struct SurrogateTerm {
  std::uint64_t trajectory = 0;
  int step = 0;
  double ratio = 1.0;
  double clipped_ratio = 1.0;
  double advantage = 0.0;
  /// True when the unclipped branch is selected, i.e. the term has gradient.
  bool contributes = true;
};

struct SurrogateDiagnostics {
  /// Fraction of terms with |ratio - 1| > clip.
  double clipped_fraction = 0.0;
  /// Mean over trajectories of the summed surrogate terms.
  double objective = 0.0;
  std::size_t terms = 0;
  std::size_t excluded = 0;
  std::vector<SurrogateTerm> log;
};

struct IsResult {
  ParamStore gradient;
  SurrogateDiagnostics diagnostics;
};

/// Gradient (ascent) of the PPO clipped surrogate
///   mean_i sum_t min(rho_t A_i, clip(rho_t, 1 - eps, 1 + eps) A_i)
/// over the trajectories in `rows`, with rho_t = exp(logp_theta - stored logp).
/// `theta_old` must be the snapshot that collected the batch. Trajectories
/// with a non-finite ratio are excluded and counted.
IsResult ddpo_is_gradient(const RolloutBatch& batch, std::span<const std::size_t> rows,
                          const ParamStore& params, const ParamStore& theta_old,
                          const PolicyModel& model, double clip, const EstimatorOptions& options,
                          bool keep_log = false, const RewardFunction* reward = nullptr);

// ---------------------------------------------------------------------------
// Training

enum class Algorithm { kRwr, kRwrSparse, kDdpoSf, kDdpoIs };

std::string to_string(Algorithm a);
Algorithm parse_algorithm(const std::string& s);

struct TrainConfig {
  Algorithm algorithm = Algorithm::kDdpoIs;
  std::size_t iterations = 10;
  std::size_t samples_per_iter = 256;
  std::size_t batch_size = 64;
  std::size_t updates_per_iter = 4;
  double clip_range = 1e-4;
  double beta_rwr = 0.2;
  double percentile = 0.9;
  AdamWConfig adam;
  double guidance_weight = 5.0;
  int steps = 50;
  AdvantageMode advantage = AdvantageMode::kNormalized;
  bool reward_path_gradient = true;
  int workers = 1;
  std::uint64_t seed = 0;

  /// Defaults from the reference hyperparameter table for `a`.
  static TrainConfig defaults(Algorithm a);
  void validate() const;
};

struct TrainState {
  ParamStore params;
  AdamWState adam;
  RewardStats stats;
  std::uint64_t iteration = 0;
  std::uint64_t reward_queries = 0;
  std::uint64_t failed_iterations = 0;

  static TrainState fresh(ParamStore params, std::size_t num_contexts);
  friend bool operator==(const TrainState&, const TrainState&) = default;
};

/// Stored in the checkpoint format with prefixed segment names.
void save_train_state(const std::filesystem::path& path, const TrainState& state);
TrainState load_train_state(const std::filesystem::path& path);

struct IterationMetrics {
  std::uint64_t iteration = 0;
  std::uint64_t reward_queries = 0;
  double mean_reward = 0.0;
  double std_reward = 0.0;
  double mean_advantage = 0.0;
  double clipped_fraction = 0.0;
  std::size_t invalid_count = 0;
  std::size_t skipped_updates = 0;
  /// NaN for contexts absent from the batch.
  std::vector<double> context_reward;
};

void write_metrics_header(std::ostream& out, std::size_t num_contexts);
void write_metrics_row(std::ostream& out, const IterationMetrics& m);

/// Collect, score, normalize, update. Every random draw is keyed by
/// (seed, iteration), so a trainer rebuilt from a saved state continues the
/// same run.
class Trainer {
 public:
  Trainer(TrainConfig config, DenoiserSpec spec, NoiseSchedule schedule, GuidanceConfig guidance,
          const RewardFunction& reward, ContextSampler contexts, TrainState state);

  IterationMetrics step();

  const TrainState& state() const { return state_; }
  const TrainConfig& config() const { return config_; }
  /// Surrogate terms of every update in the last iteration (DDPO-IS only),
  /// recorded when enabled.
  void set_keep_update_log(bool keep) { keep_log_ = keep; }
  const std::vector<SurrogateDiagnostics>& update_log() const { return update_log_; }

 private:
  IterationMetrics rwr_iteration(RolloutBatch& batch, IterationMetrics m);
  IterationMetrics ddpo_iteration(RolloutBatch& batch, IterationMetrics m);
  bool apply(const ParamStore& loss_grad);

  TrainConfig config_;
  DenoiserSpec spec_;
  NoiseSchedule schedule_;
  GuidanceConfig guidance_;
  const RewardFunction* reward_;
  ContextSampler contexts_;
  TrainState state_;
  bool keep_log_ = false;
  std::vector<SurrogateDiagnostics> update_log_;
};

/// One weighted regression step on (x0, c) pairs with fresh timesteps and
/// noise. Returns false (and leaves everything untouched) when all weights
/// are zero.
bool rwr_update(ParamStore& params, AdamWState& adam, const DdpmBatch& batch,
                const DenoiserSpec& spec, const NoiseSchedule& s, const GuidanceConfig& g,
                const AdamWConfig& opt, StreamRng& rng);

// ---------------------------------------------------------------------------
// Pretraining

struct PretrainConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 128;
  AdamWConfig adam{1e-3, 0.0, 0.9, 0.999, 1e-8, 1.0};
  std::uint64_t seed = 0;
};

/// Minimizes the DDPM loss on synthetic data. `on_step(step, loss)` is called
/// after every update when set.
ParamStore pretrain_ddpm(ParamStore params, const DenoiserSpec& spec, const NoiseSchedule& s,
                         const GuidanceConfig& g, DataDomain domain, const PretrainConfig& config,
                         const std::function<void(std::size_t, double)>& on_step = {});

}  // namespace ddpolab
