// Copyright 2026 The ddpolab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "ddpolab/autodiff.hpp"
#include "ddpolab/mlp.hpp"
#include "ddpolab/param_store.hpp"
#include "ddpolab/rng.hpp"
#include "ddpolab/schedule.hpp"
#include "ddpolab/tensor.hpp"

namespace ddpolab {

/// Context id used for the unconditional branch (all-zeros embedding).
inline constexpr int kNullContext = -1;

struct GuidanceConfig {
  double weight = 5.0;
  /// Use the guided prediction inside training losses and likelihoods.
  bool cfg_training = true;
  /// Probability of dropping the context during pretraining.
  double uncond_mask_prob = 0.1;

  void validate() const;
};

/// Epsilon-prediction network: input is [x_t, time features, one-hot context].
struct DenoiserSpec {
  static constexpr std::size_t kTimeFeatures = 4;

  std::size_t data_dim = 2;
  std::size_t num_contexts = 1;
  std::vector<std::size_t> hidden{32, 32};
  Activation activation = Activation::kSilu;
  int steps = 50;

  std::size_t input_dim() const { return data_dim + kTimeFeatures + num_contexts; }
  MlpArch arch() const;
};

ParamStore init_denoiser(const DenoiserSpec& spec, std::uint64_t seed);

/// Builds the network input for a batch. `t` and `contexts` are per row.
Tensor denoiser_input(const DenoiserSpec& spec, const Tensor& xt, std::span<const int> t,
                      std::span<const int> contexts);

/// Guided epsilon prediction w * eps(x, t, c) + (1 - w) * eps(x, t).
/// With w == 1 only the conditional branch is evaluated.
Tensor predict_eps(const ParamStore& params, const DenoiserSpec& spec, const Tensor& xt,
                   std::span<const int> t, std::span<const int> contexts, double weight);
ad::Var predict_eps(std::span<const ad::Var> leaves, const DenoiserSpec& spec, const Tensor& xt,
                    std::span<const int> t, std::span<const int> contexts, double weight);

/// Guidance weight in effect: sampling always uses g.weight; training losses
/// use it only under CFG training and fall back to the conditional branch.
double effective_guidance(const GuidanceConfig& g, bool training);

/// sqrt(abar_t) x0 + sqrt(1 - abar_t) noise.
Tensor q_sample(const Tensor& x0, int t, const Tensor& noise, const NoiseSchedule& s);

struct PosteriorCoefficients {
  double x0 = 0.0;
  double xt = 0.0;
};
PosteriorCoefficients posterior_coefficients(int t, const NoiseSchedule& s);

/// Mean of q(x_{t-1} | x_t, x_0).
Tensor posterior_mean(const Tensor& x0, const Tensor& xt, int t, const NoiseSchedule& s);

/// (x_t - beta_t / sqrt(1 - abar_t) * eps) / sqrt(alpha_t), per-row timesteps.
Tensor mu_from_eps(const Tensor& eps, const Tensor& xt, std::span<const int> t,
                   const NoiseSchedule& s);
Tensor mu_from_eps(const Tensor& eps, const Tensor& xt, int t, const NoiseSchedule& s);
ad::Var mu_from_eps(ad::Var eps, const Tensor& xt, std::span<const int> t, const NoiseSchedule& s);

/// x_{t-1} = mu + sigma_t * noise.
Tensor denoise_step(const Tensor& mu, double sigma, const Tensor& noise);

/// Rows of clean data with their contexts and optional per-row weights.
struct DdpmBatch {
  Tensor x0;
  std::vector<int> contexts;
  std::vector<double> weights;  // empty: uniform
};

enum class DdpmPhase {
  kPretrain,  // contexts masked with uncond_mask_prob, conditional prediction
  kFinetune,  // no masking, prediction per effective_guidance(g, true)
};

/// Mean (or weight-normalized) squared distance between the posterior mean
/// and the model mean, one random timestep and noise draw per row.
ad::Var ddpm_loss(std::span<const ad::Var> leaves, const DenoiserSpec& spec,
                  const DdpmBatch& batch, const NoiseSchedule& s, const GuidanceConfig& g,
                  DdpmPhase phase, StreamRng& rng);

/// Batched epsilon predictor: (x_t, t, contexts) -> eps. Lets the samplers run
/// on closed-form predictors as well as networks.
using EpsPredictor = std::function<Tensor(const Tensor& xt, int t, std::span<const int> contexts)>;

EpsPredictor network_predictor(const ParamStore& params, const DenoiserSpec& spec, double weight);

}  // namespace ddpolab
