// Copyright 2026 The ddpolab Authors
// SPDX-License-Identifier: Apache-2.0

#include "ddpolab/mdp.hpp"

#include <cmath>
#include <numbers>

#include "ddpolab/binary_io.hpp"
#include "ddpolab/checkpoint.hpp"
#include "ddpolab/error.hpp"
#include "ddpolab/parallel.hpp"

namespace ddpolab {

double DenoiseTrajectory::total_logp() const {
  double acc = 0.0;
  for (double lp : logps) acc += lp;
  return acc;
}

namespace {

double logp_scale(double sigma) {
  if (!(sigma > 0.0)) throw DomainError("gaussian_logp: sigma must be positive");
  return -1.0 / (2.0 * sigma * sigma);
}

double logp_offset(std::size_t dim, double sigma) {
  return -0.5 * static_cast<double>(dim) * std::log(2.0 * std::numbers::pi * sigma * sigma);
}

}  // namespace

Tensor gaussian_logp_rows(const Tensor& x, const Tensor& mu, double sigma) {
  if (x.shape() != mu.shape()) throw ShapeError("gaussian_logp: x and mu shapes differ");
  const double a = logp_scale(sigma);
  Tensor s = kernels::sum_rows(kernels::square(kernels::sub(x, mu)));
  return kernels::add_scalar(kernels::scale(s, a), logp_offset(x.cols(), sigma));
}

ad::Var gaussian_logp_rows(const Tensor& x, ad::Var mu, double sigma) {
  if (x.shape() != mu.value().shape()) throw ShapeError("gaussian_logp: x and mu shapes differ");
  const double a = logp_scale(sigma);
  ad::Var s = ad::sum_rows(ad::square(ad::sub(mu.tape->constant(x), mu)));
  return ad::add_scalar(ad::scale(s, a), logp_offset(x.cols(), sigma));
}

double gaussian_logp(std::span<const double> x, std::span<const double> mu, double sigma) {
  if (x.size() != mu.size()) throw ShapeError("gaussian_logp: x and mu lengths differ");
  return gaussian_logp_rows(Tensor::row(x), Tensor::row(mu), sigma)[0];
}

int ContextSampler::draw(StreamRng& rng) const {
  if (fixed >= 0) return fixed;
  return static_cast<int>(rng.below(num_contexts));
}

namespace {

struct ChunkResult {
  std::vector<DenoiseTrajectory> trajectories;
  std::vector<bool> valid;
};

ChunkResult rollout_chunk(const EpsPredictor& predictor, const NoiseSchedule& s,
                          std::size_t dim, const ContextSampler& sampler, std::uint64_t first,
                          std::size_t count, const RolloutOptions& options) {
  const int steps = s.steps();
  std::vector<StreamRng> rngs;
  rngs.reserve(count);
  ChunkResult out;
  out.trajectories.resize(count);
  std::vector<int> contexts(count);
  Tensor x = Tensor::matrix(count, dim);
  for (std::size_t r = 0; r < count; ++r) {
    const std::uint64_t index = first + r;
    rngs.emplace_back(options.seed,
                      derive_stream({static_cast<std::uint64_t>(StreamTag::kRollout),
                                     options.round, index}));
    auto& traj = out.trajectories[r];
    traj.index = index;
    traj.context = contexts[r] = sampler.draw(rngs[r]);
    rngs[r].fill_normal(x.row_span(r));
    traj.states = Tensor::matrix(options.keep_states ? static_cast<std::size_t>(steps) + 1 : 1, dim);
    if (options.keep_states) {
      traj.logps.assign(static_cast<std::size_t>(steps), 0.0);
      auto dst = traj.states.row_span(0);
      std::copy(x.row_span(r).begin(), x.row_span(r).end(), dst.begin());
    }
  }

  for (int t = steps; t >= 1; --t) {
    const std::size_t k = static_cast<std::size_t>(steps - t);
    Tensor eps = predictor(x, t, contexts);
    Tensor mu = mu_from_eps(eps, x, t, s);
    Tensor next;
    if (s.stochastic(t)) {
      Tensor noise = Tensor::matrix(count, dim);
      for (std::size_t r = 0; r < count; ++r) rngs[r].fill_normal(noise.row_span(r));
      next = denoise_step(mu, s.sigma(t), noise);
      if (options.keep_states) {
        Tensor lp = gaussian_logp_rows(next, mu, s.sigma(t));
        for (std::size_t r = 0; r < count; ++r) out.trajectories[r].logps[k] = lp[r];
      }
    } else {
      next = std::move(mu);
    }
    x = std::move(next);
    if (options.keep_states) {
      for (std::size_t r = 0; r < count; ++r) {
        auto src = x.row_span(r);
        std::copy(src.begin(), src.end(), out.trajectories[r].states.row_span(k + 1).begin());
      }
    }
  }
  out.valid.resize(count);
  for (std::size_t r = 0; r < count; ++r) {
    auto& traj = out.trajectories[r];
    if (!options.keep_states) {
      auto src = x.row_span(r);
      std::copy(src.begin(), src.end(), traj.states.row_span(0).begin());
    }
    bool ok = traj.states.all_finite();
    for (double lp : traj.logps) ok = ok && std::isfinite(lp);
    out.valid[r] = ok;
  }
  return out;
}

}  // namespace

RolloutBatch collect_trajectories(const EpsPredictor& predictor, const NoiseSchedule& s,
                                  std::size_t data_dim, const ContextSampler& contexts,
                                  std::size_t n, const RolloutOptions& options) {
  if (n < 1) throw DomainError("collect_trajectories: n must be >= 1");
  const std::size_t chunks = chunk_count(n, kRolloutChunk);
  std::vector<ChunkResult> results(chunks);
  parallel_for(chunks, options.workers, [&](std::size_t c) {
    const std::size_t begin = c * kRolloutChunk;
    const std::size_t count = std::min(kRolloutChunk, n - begin);
    results[c] = rollout_chunk(predictor, s, data_dim, contexts, options.first_index + begin,
                               count, options);
  });
  RolloutBatch batch;
  batch.steps = s.steps();
  batch.data_dim = data_dim;
  batch.trajectories.reserve(n);
  for (auto& chunk : results) {
    for (std::size_t r = 0; r < chunk.trajectories.size(); ++r) {
      if (chunk.valid[r]) {
        batch.trajectories.push_back(std::move(chunk.trajectories[r]));
      } else {
        ++batch.invalid_count;
      }
    }
  }
  return batch;
}

RolloutBatch collect_trajectories(const ParamStore& params, const DenoiserSpec& spec,
                                  const NoiseSchedule& s, const GuidanceConfig& g,
                                  const ContextSampler& contexts, std::size_t n,
                                  const RolloutOptions& options) {
  validate_mlp(params, spec.arch());
  RolloutBatch batch = collect_trajectories(network_predictor(params, spec, g.weight), s,
                                            spec.data_dim, contexts, n, options);
  batch.theta_snapshot_id = checkpoint_hash(params);
  return batch;
}

namespace {

struct StepInputs {
  Tensor xt;
  Tensor action;
  std::vector<int> t;
  std::vector<int> contexts;
};

StepInputs gather_step(const RolloutBatch& batch, std::span<const std::size_t> rows,
                       std::size_t k) {
  const std::size_t d = batch.data_dim;
  StepInputs in{Tensor::matrix(rows.size(), d), Tensor::matrix(rows.size(), d),
                std::vector<int>(rows.size(), batch.steps - static_cast<int>(k)),
                std::vector<int>(rows.size())};
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const DenoiseTrajectory& traj = batch.trajectories[rows[r]];
    if (traj.steps() != batch.steps) {
      throw ShapeError("trajectory " + std::to_string(traj.index) + " has no stored states");
    }
    auto xs = traj.state(k);
    auto as = traj.state(k + 1);
    std::copy(xs.begin(), xs.end(), in.xt.row_span(r).begin());
    std::copy(as.begin(), as.end(), in.action.row_span(r).begin());
    in.contexts[r] = traj.context;
  }
  return in;
}

}  // namespace

std::vector<std::pair<int, ad::Var>> recompute_logps(std::span<const ad::Var> leaves,
                                                     const DenoiserSpec& spec,
                                                     const NoiseSchedule& s, double weight,
                                                     const RolloutBatch& batch,
                                                     std::span<const std::size_t> rows) {
  std::vector<std::pair<int, ad::Var>> out;
  for (int k = 0; k < batch.steps; ++k) {
    const int t = batch.steps - k;
    if (!s.stochastic(t)) continue;
    StepInputs in = gather_step(batch, rows, static_cast<std::size_t>(k));
    ad::Var eps = predict_eps(leaves, spec, in.xt, in.t, in.contexts, weight);
    ad::Var mu = mu_from_eps(eps, in.xt, in.t, s);
    out.emplace_back(k, gaussian_logp_rows(in.action, mu, s.sigma(t)));
  }
  return out;
}

std::vector<std::vector<double>> recompute_logps(const ParamStore& params,
                                                 const DenoiserSpec& spec,
                                                 const NoiseSchedule& s, double weight,
                                                 const RolloutBatch& batch) {
  std::vector<std::vector<double>> out(batch.size(),
                                       std::vector<double>(static_cast<std::size_t>(batch.steps)));
  const std::size_t chunks = chunk_count(batch.size(), kRolloutChunk);
  for (std::size_t c = 0; c < chunks; ++c) {
    std::vector<std::size_t> rows;
    for (std::size_t i = c * kRolloutChunk; i < std::min(batch.size(), (c + 1) * kRolloutChunk); ++i) {
      rows.push_back(i);
    }
    ad::Tape tape;
    auto leaves = tape.bind(params);
    for (auto& [k, v] : recompute_logps(leaves, spec, s, weight, batch, rows)) {
      for (std::size_t r = 0; r < rows.size(); ++r) {
        out[rows[r]][static_cast<std::size_t>(k)] = v.value()[r];
      }
    }
  }
  return out;
}

ad::Var final_step_mean(std::span<const ad::Var> leaves, const DenoiserSpec& spec,
                        const NoiseSchedule& s, double weight, const RolloutBatch& batch,
                        std::span<const std::size_t> rows) {
  const std::size_t k = static_cast<std::size_t>(batch.steps - 1);
  StepInputs in = gather_step(batch, rows, k);
  ad::Var eps = predict_eps(leaves, spec, in.xt, in.t, in.contexts, weight);
  return mu_from_eps(eps, in.xt, in.t, s);
}

double trajectory_return(const DenoiseTrajectory& traj) {
  if (!traj.reward) {
    throw DomainError("trajectory " + std::to_string(traj.index) + " has no reward yet");
  }
  return *traj.reward;
}

void write_trajectory_dump(const std::filesystem::path& path, const RolloutBatch& batch) {
  ByteWriter w;
  w.bytes("DDPOTRAJ1");
  w.u32(static_cast<std::uint32_t>(batch.size()));
  w.u32(static_cast<std::uint32_t>(batch.data_dim));
  for (const auto& traj : batch.trajectories) {
    if (traj.steps() != batch.steps) throw ShapeError("trajectory dump needs full states");
    w.i32(traj.context);
    w.u32(static_cast<std::uint32_t>(batch.steps));
    for (double v : traj.states.values()) w.f64(v);
    for (double v : traj.logps) w.f64(v);
  }
  write_file(path, w.data());
}

RolloutBatch read_trajectory_dump(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  ByteReader r(bytes);
  r.expect("DDPOTRAJ1");
  RolloutBatch batch;
  const std::uint32_t count = r.u32();
  batch.data_dim = r.u32();
  batch.trajectories.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    auto& traj = batch.trajectories[i];
    traj.index = i;
    traj.context = r.i32();
    const auto steps = r.u32();
    if (i == 0) batch.steps = static_cast<int>(steps);
    if (static_cast<int>(steps) != batch.steps) throw FormatError("mixed step counts in dump");
    traj.states = Tensor::matrix(steps + 1, batch.data_dim);
    for (double& v : traj.states.values()) v = r.f64();
    traj.logps.resize(steps);
    for (double& v : traj.logps) v = r.f64();
  }
  if (!r.at_end()) throw FormatError("trailing bytes in trajectory dump");
  return batch;
}

}  // namespace ddpolab
