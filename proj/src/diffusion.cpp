// Copyright 2026 The ddpolab Authors
// SPDX-License-Identifier: Apache-2.0

#include "ddpolab/diffusion.hpp"

#include <cmath>
#include <numbers>

#include "ddpolab/error.hpp"

namespace ddpolab {

void GuidanceConfig::validate() const {
  if (!(weight >= 0.0)) throw ConfigError("guidance weight must be >= 0");
  if (!(uncond_mask_prob >= 0.0 && uncond_mask_prob <= 1.0)) {
    throw ConfigError("uncond_mask_prob must lie in [0, 1]");
  }
}

MlpArch DenoiserSpec::arch() const {
  MlpArch a;
  a.activation = activation;
  a.layers.push_back(input_dim());
  a.layers.insert(a.layers.end(), hidden.begin(), hidden.end());
  a.layers.push_back(data_dim);
  return a;
}

ParamStore init_denoiser(const DenoiserSpec& spec, std::uint64_t seed) {
  return init_mlp(spec.arch(), seed);
}

Tensor denoiser_input(const DenoiserSpec& spec, const Tensor& xt, std::span<const int> t,
                      std::span<const int> contexts) {
  const std::size_t rows = xt.rows();
  if (xt.cols() != spec.data_dim) {
    throw ShapeError("denoiser input has " + std::to_string(xt.cols()) + " columns, expected " +
                     std::to_string(spec.data_dim));
  }
  if (t.size() != rows || contexts.size() != rows) {
    throw ShapeError("denoiser input: per-row timestep/context count mismatch");
  }
  const std::size_t width = spec.input_dim();
  Tensor in = Tensor::matrix(rows, width);
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = in.data() + r * width;
    for (std::size_t c = 0; c < spec.data_dim; ++c) row[c] = xt.at(r, c);
    const double f = static_cast<double>(t[r]) / static_cast<double>(spec.steps);
    double* tf = row + spec.data_dim;
    tf[0] = 2.0 * f - 1.0;
    tf[1] = std::sin(std::numbers::pi * f);
    tf[2] = std::cos(std::numbers::pi * f);
    tf[3] = std::cos(2.0 * std::numbers::pi * f);
    const int c = contexts[r];
    if (c != kNullContext) {
      if (c < 0 || static_cast<std::size_t>(c) >= spec.num_contexts) {
        throw DomainError("context id " + std::to_string(c) + " out of range");
      }
      row[spec.data_dim + DenoiserSpec::kTimeFeatures + static_cast<std::size_t>(c)] = 1.0;
    }
  }
  return in;
}

namespace {

std::vector<int> null_contexts(std::size_t n) { return std::vector<int>(n, kNullContext); }

}  // namespace

Tensor predict_eps(const ParamStore& params, const DenoiserSpec& spec, const Tensor& xt,
                   std::span<const int> t, std::span<const int> contexts, double weight) {
  const MlpArch arch = spec.arch();
  Tensor cond = mlp_forward(params, denoiser_input(spec, xt, t, contexts), arch);
  if (weight == 1.0) return cond;
  const auto nulls = null_contexts(xt.rows());
  Tensor uncond = mlp_forward(params, denoiser_input(spec, xt, t, nulls), arch);
  return kernels::add(kernels::scale(cond, weight), kernels::scale(uncond, 1.0 - weight));
}

ad::Var predict_eps(std::span<const ad::Var> leaves, const DenoiserSpec& spec, const Tensor& xt,
                    std::span<const int> t, std::span<const int> contexts, double weight) {
  ad::Tape& tape = *leaves.front().tape;
  const MlpArch arch = spec.arch();
  ad::Var cond = mlp_forward(leaves, tape.constant(denoiser_input(spec, xt, t, contexts)), arch);
  if (weight == 1.0) return cond;
  const auto nulls = null_contexts(xt.rows());
  ad::Var uncond = mlp_forward(leaves, tape.constant(denoiser_input(spec, xt, t, nulls)), arch);
  return ad::add(ad::scale(cond, weight), ad::scale(uncond, 1.0 - weight));
}

double effective_guidance(const GuidanceConfig& g, bool training) {
  if (!training || g.cfg_training) return g.weight;
  return 1.0;
}

Tensor q_sample(const Tensor& x0, int t, const Tensor& noise, const NoiseSchedule& s) {
  if (x0.shape() != noise.shape()) throw ShapeError("q_sample: noise shape differs from x0");
  const double abar = s.alpha_bar(t);
  return kernels::add(kernels::scale(x0, std::sqrt(abar)),
                      kernels::scale(noise, std::sqrt(1.0 - abar)));
}

PosteriorCoefficients posterior_coefficients(int t, const NoiseSchedule& s) {
  const double abar = s.alpha_bar(t);
  const double abar_prev = s.alpha_bar(t - 1);
  return {std::sqrt(abar_prev) * s.beta(t) / (1.0 - abar),
          std::sqrt(s.alpha(t)) * (1.0 - abar_prev) / (1.0 - abar)};
}

Tensor posterior_mean(const Tensor& x0, const Tensor& xt, int t, const NoiseSchedule& s) {
  if (x0.shape() != xt.shape()) throw ShapeError("posterior_mean: x0 and xt shapes differ");
  const auto c = posterior_coefficients(t, s);
  return kernels::add(kernels::scale(x0, c.x0), kernels::scale(xt, c.xt));
}

namespace {

struct MuCoefficients {
  std::vector<double> eps_scale;
  std::vector<double> inv_sqrt_alpha;
};

MuCoefficients mu_coefficients(std::span<const int> t, const NoiseSchedule& s) {
  MuCoefficients c;
  c.eps_scale.reserve(t.size());
  c.inv_sqrt_alpha.reserve(t.size());
  for (int ti : t) {
    c.eps_scale.push_back(s.beta(ti) / std::sqrt(1.0 - s.alpha_bar(ti)));
    c.inv_sqrt_alpha.push_back(1.0 / std::sqrt(s.alpha(ti)));
  }
  return c;
}

}  // namespace

Tensor mu_from_eps(const Tensor& eps, const Tensor& xt, std::span<const int> t,
                   const NoiseSchedule& s) {
  if (eps.shape() != xt.shape()) throw ShapeError("mu_from_eps: eps and xt shapes differ");
  const auto c = mu_coefficients(t, s);
  return kernels::scale_rows(kernels::sub(xt, kernels::scale_rows(eps, c.eps_scale)),
                             c.inv_sqrt_alpha);
}

Tensor mu_from_eps(const Tensor& eps, const Tensor& xt, int t, const NoiseSchedule& s) {
  const std::vector<int> ts(xt.rows(), t);
  return mu_from_eps(eps, xt, ts, s);
}

ad::Var mu_from_eps(ad::Var eps, const Tensor& xt, std::span<const int> t, const NoiseSchedule& s) {
  const auto c = mu_coefficients(t, s);
  ad::Var x = eps.tape->constant(xt);
  return ad::scale_rows(ad::sub(x, ad::scale_rows(eps, c.eps_scale)), c.inv_sqrt_alpha);
}

Tensor denoise_step(const Tensor& mu, double sigma, const Tensor& noise) {
  if (mu.shape() != noise.shape()) throw ShapeError("denoise_step: noise shape differs from mu");
  return kernels::add(mu, kernels::scale(noise, sigma));
}

ad::Var ddpm_loss(std::span<const ad::Var> leaves, const DenoiserSpec& spec,
                  const DdpmBatch& batch, const NoiseSchedule& s, const GuidanceConfig& g,
                  DdpmPhase phase, StreamRng& rng) {
  const std::size_t rows = batch.x0.rows();
  const std::size_t d = spec.data_dim;
  if (rows == 0) throw ShapeError("ddpm_loss: empty batch");
  if (batch.contexts.size() != rows) throw ShapeError("ddpm_loss: context count mismatch");
  if (!batch.weights.empty() && batch.weights.size() != rows) {
    throw ShapeError("ddpm_loss: weight count mismatch");
  }

  std::vector<int> t(rows);
  std::vector<int> contexts = batch.contexts;
  Tensor xt = Tensor::matrix(rows, d);
  Tensor target = Tensor::matrix(rows, d);
  for (std::size_t r = 0; r < rows; ++r) {
    t[r] = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(s.steps())));
    const double abar = s.alpha_bar(t[r]);
    const auto pc = posterior_coefficients(t[r], s);
    for (std::size_t c = 0; c < d; ++c) {
      const double x0 = batch.x0.at(r, c);
      const double noisy = std::sqrt(abar) * x0 + std::sqrt(1.0 - abar) * rng.normal();
      xt.at(r, c) = noisy;
      target.at(r, c) = pc.x0 * x0 + pc.xt * noisy;
    }
    if (phase == DdpmPhase::kPretrain && rng.uniform() < g.uncond_mask_prob) {
      contexts[r] = kNullContext;
    }
  }

  const double weight = phase == DdpmPhase::kPretrain ? 1.0 : effective_guidance(g, true);
  ad::Tape& tape = *leaves.front().tape;
  ad::Var eps = predict_eps(leaves, spec, xt, t, contexts, weight);
  ad::Var mu = mu_from_eps(eps, xt, t, s);
  ad::Var per_row = ad::sum_rows(ad::square(ad::sub(tape.constant(target), mu)));
  if (batch.weights.empty()) return ad::mean(per_row);

  double total = 0.0;
  for (double w : batch.weights) {
    if (!(w >= 0.0)) throw DomainError("ddpm_loss: weights must be nonnegative");
    total += w;
  }
  if (!(total > 0.0)) throw DomainError("ddpm_loss: weights sum to zero");
  Tensor normalized = Tensor::matrix(1, rows);
  for (std::size_t r = 0; r < rows; ++r) normalized[r] = batch.weights[r] / total;
  return ad::matmul(tape.constant(std::move(normalized)), per_row);
}

EpsPredictor network_predictor(const ParamStore& params, const DenoiserSpec& spec, double weight) {
  return [&params, spec, weight](const Tensor& xt, int t, std::span<const int> contexts) {
    const std::vector<int> ts(xt.rows(), t);
    return predict_eps(params, spec, xt, ts, contexts, weight);
  };
}

}  // namespace ddpolab
