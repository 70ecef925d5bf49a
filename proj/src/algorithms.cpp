// Copyright 2026 The ddpolab Authors
// SPDX-License-Identifier: Apache-2.0

#include "ddpolab/algorithms.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>

#include "ddpolab/checkpoint.hpp"
#include "ddpolab/error.hpp"
#include "ddpolab/parallel.hpp"

namespace ddpolab {

// ---------------------------------------------------------------------------
// Reward normalization

double RewardStats::variance(std::size_t c) const {
  const Entry& e = entries_.at(c);
  return e.count > 0.0 ? e.m2 / e.count : 0.0;
}

RewardStats::Entry RewardStats::combine(const Entry& a, const Entry& b) {
  if (a.count == 0.0) return b;
  if (b.count == 0.0) return a;
  const double n = a.count + b.count;
  const double delta = b.mean - a.mean;
  return {n, a.mean + delta * (b.count / n), a.m2 + b.m2 + delta * delta * (a.count * b.count / n)};
}

RewardStats::Entry RewardStats::summarize(std::span<const double> values) {
  Entry e;
  if (values.empty()) return e;
  e.count = static_cast<double>(values.size());
  if (std::all_of(values.begin(), values.end(), [&](double v) { return v == values[0]; })) {
    e.mean = values[0];
    return e;
  }
  double sum = 0.0;
  for (double v : values) sum += v;
  e.mean = sum / e.count;
  for (double v : values) e.m2 += (v - e.mean) * (v - e.mean);
  return e;
}

std::string to_string(AdvantageMode m) {
  return m == AdvantageMode::kNormalized ? "normalized" : "raw";
}

AdvantageMode parse_advantage_mode(const std::string& s) {
  if (s == "normalized") return AdvantageMode::kNormalized;
  if (s == "raw") return AdvantageMode::kRaw;
  throw ConfigError("unknown advantage mode '" + s + "' (expected normalized or raw)");
}

Advantages normalize_rewards(std::span<const double> rewards, std::span<const int> contexts,
                             RewardStats& stats) {
  if (rewards.size() != contexts.size()) throw ShapeError("normalize_rewards: length mismatch");
  const std::size_t k = stats.num_contexts();
  std::vector<std::vector<double>> groups(k);
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    if (!std::isfinite(rewards[i])) throw DomainError("normalize_rewards: non-finite reward");
    if (contexts[i] < 0 || static_cast<std::size_t>(contexts[i]) >= k) {
      throw DomainError("normalize_rewards: context " + std::to_string(contexts[i]) +
                        " out of range");
    }
    groups[static_cast<std::size_t>(contexts[i])].push_back(rewards[i]);
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (groups[c].empty()) continue;
    stats.entry(c) = RewardStats::combine(stats.entry(c), RewardStats::summarize(groups[c]));
  }
  Advantages out{std::vector<double>(rewards.size(), 0.0), std::vector<double>(rewards.size(), 0.0)};
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    const auto& e = stats.entry(static_cast<std::size_t>(contexts[i]));
    if (e.count <= 1.0 || e.m2 <= 0.0) continue;
    const double denom = std::max(std::sqrt(e.m2 / e.count), kStdFloor);
    out.values[i] = (rewards[i] - e.mean) / denom;
    out.scales[i] = 1.0 / denom;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reward-weighted regression

std::vector<double> softmax_weights(std::span<const double> rewards, double beta) {
  if (!(beta > 0.0)) throw DomainError("softmax_weights: beta must be positive");
  if (rewards.empty()) return {};
  double top = -std::numeric_limits<double>::infinity();
  for (double r : rewards) top = std::max(top, beta * r);
  std::vector<double> w(rewards.size());
  double total = 0.0;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    w[i] = std::exp(beta * rewards[i] - top);
    total += w[i];
  }
  for (double& v : w) v /= total;
  return w;
}

std::vector<double> sparse_weights(std::span<const double> rewards, double percentile) {
  if (!(percentile >= 0.0 && percentile < 1.0)) {
    throw DomainError("sparse_weights: percentile must be in [0, 1)");
  }
  if (rewards.empty()) throw DomainError("sparse_weights: empty context group");
  const std::size_t n = rewards.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return rewards[a] < rewards[b]; });
  const auto dropped = static_cast<std::size_t>(std::floor(percentile * static_cast<double>(n)));
  std::vector<double> w(n, 0.0);
  for (std::size_t j = dropped; j < n; ++j) w[order[j]] = 1.0;
  return w;
}

namespace {

template <typename Rule>
std::vector<double> per_context(std::span<const double> rewards, std::span<const int> contexts,
                                Rule rule) {
  if (rewards.size() != contexts.size()) throw ShapeError("rwr weights: length mismatch");
  std::vector<int> ids(contexts.begin(), contexts.end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  std::vector<double> out(rewards.size(), 0.0);
  for (int c : ids) {
    std::vector<std::size_t> members;
    std::vector<double> group;
    for (std::size_t i = 0; i < rewards.size(); ++i) {
      if (contexts[i] == c) {
        members.push_back(i);
        group.push_back(rewards[i]);
      }
    }
    const auto w = rule(group);
    for (std::size_t j = 0; j < members.size(); ++j) out[members[j]] = w[j];
  }
  return out;
}

}  // namespace

std::vector<double> rwr_weights_exp(std::span<const double> rewards, std::span<const int> contexts,
                                    double beta) {
  return per_context(rewards, contexts,
                     [beta](const std::vector<double>& g) { return softmax_weights(g, beta); });
}

std::vector<double> rwr_weights_sparse(std::span<const double> rewards,
                                       std::span<const int> contexts, double percentile) {
  return per_context(rewards, contexts, [percentile](const std::vector<double>& g) {
    return sparse_weights(g, percentile);
  });
}

// ---------------------------------------------------------------------------
// Optimizer

AdamWState AdamWState::zeros_like(const ParamStore& params) {
  return {params.zeros_like(), params.zeros_like(), 0};
}

double adamw_step(ParamStore& params, const ParamStore& grads, AdamWState& state,
                  const AdamWConfig& c) {
  if (!grads.same_layout(params)) throw ShapeError("adamw_step: gradient layout mismatch");
  if (!grads.all_finite()) throw NumericalError("adamw_step: non-finite gradient");
  if (state.m.empty()) state = AdamWState::zeros_like(params);
  if (!state.m.same_layout(params) || !state.v.same_layout(params)) {
    throw ShapeError("adamw_step: optimizer state layout mismatch");
  }
  const double norm = std::sqrt(grads.squared_norm());
  const double clip = (c.grad_clip > 0.0 && norm > c.grad_clip) ? c.grad_clip / norm : 1.0;

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(c.beta1, t);
  const double bias2 = 1.0 - std::pow(c.beta2, t);
  const double decay = 1.0 - c.lr * c.weight_decay;
  for (std::size_t s = 0; s < params.num_segments(); ++s) {
    auto p = params.segment(s).value.values();
    auto m = state.m.segment(s).value.values();
    auto v = state.v.segment(s).value.values();
    auto g = grads.segment(s).value.values();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i] * clip;
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
      const double mhat = m[i] / bias1;
      const double vhat = v[i] / bias2;
      p[i] = p[i] * decay - c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Policy-gradient estimators

void score_batch(RolloutBatch& batch, const RewardFunction& reward, int workers) {
  parallel_for(batch.size(), workers, [&](std::size_t i) {
    auto& traj = batch.trajectories[i];
    traj.reward = reward(traj.x0(), traj.context);
  });
}

void assign_advantages(RolloutBatch& batch, const Advantages& adv) {
  if (adv.values.size() != batch.size() || adv.scales.size() != batch.size()) {
    throw ShapeError("assign_advantages: length mismatch");
  }
  for (std::size_t i = 0; i < batch.size(); ++i) {
    batch.trajectories[i].advantage = adv.values[i];
    batch.trajectories[i].advantage_scale = adv.scales[i];
  }
}

namespace {

void check_model(const PolicyModel& model) {
  if (model.spec == nullptr || model.schedule == nullptr) {
    throw ConfigError("policy model needs a denoiser spec and a schedule");
  }
}

bool use_reward_path(const PolicyModel& model, const EstimatorOptions& options,
                     const RewardFunction* reward) {
  return options.reward_path_gradient && reward != nullptr && reward->has_gradient() &&
         !model.schedule->stochastic(1);
}

// Adds sum_i scale_i * dr/dx0_i . mu_theta(x_1)_i to `objective`.
ad::Var add_reward_path(ad::Tape& tape, std::span<const ad::Var> leaves, const RolloutBatch& batch,
                        std::span<const std::size_t> rows, const PolicyModel& model,
                        const RewardFunction& reward, std::optional<ad::Var> objective) {
  const std::size_t d = batch.data_dim;
  Tensor coef = Tensor::matrix(rows.size(), d);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& traj = batch.trajectories[rows[r]];
    auto out = coef.row_span(r);
    reward.gradient(traj.x0(), traj.context, out);
    for (double& v : out) v *= traj.advantage_scale;
  }
  ad::Var mu = final_step_mean(leaves, *model.spec, *model.schedule, model.weight, batch, rows);
  ad::Var term = ad::sum(ad::mul(mu, tape.constant(std::move(coef))));
  return objective ? *objective + term : term;
}

// Chunks `rows`, builds one objective per chunk, and sums gradients in chunk
// order so the result does not depend on the worker count.
template <typename ChunkFn>
ParamStore reduce_chunks(const ParamStore& params, std::span<const std::size_t> rows, int workers,
                         ChunkFn build) {
  const std::size_t chunks = chunk_count(rows.size(), kRolloutChunk);
  std::vector<ParamStore> partial(chunks);
  parallel_for(chunks, workers, [&](std::size_t c) {
    const std::size_t begin = c * kRolloutChunk;
    const std::size_t end = std::min(rows.size(), begin + kRolloutChunk);
    ad::Tape tape;
    auto leaves = tape.bind(params);
    std::optional<ad::Var> objective = build(c, tape, leaves, rows.subspan(begin, end - begin));
    partial[c] = objective ? tape.backward(*objective) : params.zeros_like();
  });
  ParamStore total = params.zeros_like();
  for (const auto& p : partial) total.axpy(1.0, p);
  return total;
}

}  // namespace

ParamStore ddpo_sf_gradient(const RolloutBatch& batch, const ParamStore& params,
                            const PolicyModel& model, const EstimatorOptions& options,
                            const RewardFunction* reward) {
  check_model(model);
  if (checkpoint_hash(params) != batch.theta_snapshot_id) {
    throw DomainError("ddpo_sf_gradient: parameters differ from the snapshot that collected the batch");
  }
  if (batch.size() == 0) return params.zeros_like();
  const bool path = use_reward_path(model, options, reward);
  std::vector<std::size_t> rows(batch.size());
  std::iota(rows.begin(), rows.end(), 0);

  ParamStore g = reduce_chunks(
      params, rows, options.workers,
      [&](std::size_t, ad::Tape& tape, std::span<const ad::Var> leaves,
          std::span<const std::size_t> chunk) -> std::optional<ad::Var> {
        Tensor adv = Tensor::matrix(chunk.size(), 1);
        for (std::size_t r = 0; r < chunk.size(); ++r) {
          adv.values()[r] = batch.trajectories[chunk[r]].advantage;
        }
        std::optional<ad::Var> objective;
        for (auto& [k, logp] : recompute_logps(leaves, *model.spec, *model.schedule, model.weight,
                                               batch, chunk)) {
          ad::Var term = ad::sum(ad::mul(logp, tape.constant(adv)));
          objective = objective ? *objective + term : term;
        }
        if (path) objective = add_reward_path(tape, leaves, batch, chunk, model, *reward, objective);
        return objective;
      });
  g.scale(1.0 / static_cast<double>(batch.size()));
  return g;
}

IsResult ddpo_is_gradient(const RolloutBatch& batch, std::span<const std::size_t> rows,
                          const ParamStore& params, const ParamStore& theta_old,
                          const PolicyModel& model, double clip, const EstimatorOptions& options,
                          bool keep_log, const RewardFunction* reward) {
  check_model(model);
  if (!(clip > 0.0)) throw DomainError("ddpo_is_gradient: clip range must be positive");
  if (checkpoint_hash(theta_old) != batch.theta_snapshot_id) {
    throw DomainError("ddpo_is_gradient: theta_old is not the snapshot that collected the batch");
  }
  for (std::size_t r : rows) {
    if (r >= batch.size()) throw ShapeError("ddpo_is_gradient: row out of range");
  }
  const bool path = use_reward_path(model, options, reward);

  struct ChunkStats {
    std::size_t terms = 0;
    std::size_t clipped = 0;
    std::size_t excluded = 0;
    double objective = 0.0;
    std::vector<SurrogateTerm> log;
  };
  const std::size_t chunks = chunk_count(rows.size(), kRolloutChunk);
  std::vector<ChunkStats> stats(chunks);

  ParamStore g = reduce_chunks(
      params, rows, options.workers,
      [&](std::size_t c, ad::Tape& tape, std::span<const ad::Var> leaves,
          std::span<const std::size_t> chunk) -> std::optional<ad::Var> {
        ChunkStats& st = stats[c];
        // Forward pass to find trajectories whose ratios are not finite.
        std::vector<std::size_t> kept;
        {
          ad::Tape probe;
          auto probe_leaves = probe.bind(params);
          auto logps = recompute_logps(probe_leaves, *model.spec, *model.schedule, model.weight,
                                       batch, chunk);
          for (std::size_t r = 0; r < chunk.size(); ++r) {
            const auto& traj = batch.trajectories[chunk[r]];
            bool finite = std::isfinite(traj.advantage);
            for (auto& [k, logp] : logps) {
              const double ratio = std::exp(logp.value().values()[r] - traj.logps[k]);
              finite = finite && std::isfinite(ratio);
            }
            if (finite) {
              kept.push_back(chunk[r]);
            } else {
              ++st.excluded;
            }
          }
        }
        if (kept.empty()) return std::nullopt;

        std::optional<ad::Var> objective;
        for (auto& [k, logp] : recompute_logps(leaves, *model.spec, *model.schedule, model.weight,
                                               batch, kept)) {
          Tensor old = Tensor::matrix(kept.size(), 1);
          Tensor coef = Tensor::matrix(kept.size(), 1);
          for (std::size_t r = 0; r < kept.size(); ++r) {
            const auto& traj = batch.trajectories[kept[r]];
            old.values()[r] = traj.logps[static_cast<std::size_t>(k)];
            const double ratio = std::exp(logp.value().values()[r] - old.values()[r]);
            const double clipped = std::clamp(ratio, 1.0 - clip, 1.0 + clip);
            const double a = traj.advantage;
            const bool contributes = ratio * a <= clipped * a;
            coef.values()[r] = contributes ? a : 0.0;
            st.objective += std::min(ratio * a, clipped * a);
            st.terms += 1;
            if (std::abs(ratio - 1.0) > clip) st.clipped += 1;
            if (keep_log) st.log.push_back({traj.index, k, ratio, clipped, a, contributes});
          }
          ad::Var ratio = ad::exp(ad::sub(logp, tape.constant(std::move(old))));
          ad::Var term = ad::sum(ad::mul(ratio, tape.constant(std::move(coef))));
          objective = objective ? *objective + term : term;
        }
        if (path) objective = add_reward_path(tape, leaves, batch, kept, model, *reward, objective);
        return objective;
      });

  IsResult out;
  std::size_t clipped = 0;
  for (auto& st : stats) {
    out.diagnostics.terms += st.terms;
    out.diagnostics.excluded += st.excluded;
    out.diagnostics.objective += st.objective;
    clipped += st.clipped;
    out.diagnostics.log.insert(out.diagnostics.log.end(), st.log.begin(), st.log.end());
  }
  const std::size_t used = rows.size() - out.diagnostics.excluded;
  if (used > 0) {
    g.scale(1.0 / static_cast<double>(used));
    out.diagnostics.objective /= static_cast<double>(used);
  }
  if (out.diagnostics.terms > 0) {
    out.diagnostics.clipped_fraction =
        static_cast<double>(clipped) / static_cast<double>(out.diagnostics.terms);
  }
  out.gradient = std::move(g);
  return out;
}

// ---------------------------------------------------------------------------
// Training

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::kRwr: return "rwr";
    case Algorithm::kRwrSparse: return "rwr_sparse";
    case Algorithm::kDdpoSf: return "ddpo_sf";
    case Algorithm::kDdpoIs: return "ddpo_is";
  }
  return "?";
}

Algorithm parse_algorithm(const std::string& s) {
  if (s == "rwr") return Algorithm::kRwr;
  if (s == "rwr_sparse") return Algorithm::kRwrSparse;
  if (s == "ddpo_sf") return Algorithm::kDdpoSf;
  if (s == "ddpo_is") return Algorithm::kDdpoIs;
  throw ConfigError("unknown algorithm '" + s + "' (expected rwr, rwr_sparse, ddpo_sf or ddpo_is)");
}

TrainConfig TrainConfig::defaults(Algorithm a) {
  TrainConfig c;
  c.algorithm = a;
  switch (a) {
    case Algorithm::kDdpoIs:
      c.samples_per_iter = 256;
      c.batch_size = 64;
      c.updates_per_iter = 4;
      break;
    case Algorithm::kDdpoSf:
      c.samples_per_iter = 256;
      c.batch_size = 256;
      c.updates_per_iter = 1;
      break;
    case Algorithm::kRwr:
    case Algorithm::kRwrSparse:
      c.samples_per_iter = 10000;
      c.batch_size = 128;
      c.updates_per_iter = 400;
      break;
  }
  return c;
}

void TrainConfig::validate() const {
  if (samples_per_iter == 0) throw ConfigError("train.samples_per_iter must be positive");
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (updates_per_iter == 0) throw ConfigError("train.updates_per_iter must be positive");
  if (algorithm == Algorithm::kDdpoSf && updates_per_iter != 1) {
    throw ConfigError("ddpo_sf takes exactly one update per iteration");
  }
  if (!(clip_range > 0.0)) throw ConfigError("train.clip_range must be positive");
  if (!(beta_rwr > 0.0)) throw ConfigError("train.beta_rwr must be positive");
  if (!(percentile >= 0.0 && percentile < 1.0)) throw ConfigError("train.percentile must be in [0, 1)");
  if (!(adam.lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (!(adam.weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be nonnegative");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw ConfigError("train.adam_beta1/adam_beta2 must be in [0, 1)");
  }
  if (!(adam.eps > 0.0)) throw ConfigError("train.adam_eps must be positive");
  if (!(guidance_weight >= 0.0)) throw ConfigError("train.guidance_weight must be nonnegative");
  if (steps < 1) throw ConfigError("diffusion steps must be at least 1");
  if (workers < 1) throw ConfigError("workers must be at least 1");
}

TrainState TrainState::fresh(ParamStore params, std::size_t num_contexts) {
  TrainState s;
  s.adam = AdamWState::zeros_like(params);
  s.params = std::move(params);
  s.stats = RewardStats(num_contexts);
  return s;
}

namespace {

constexpr const char* kParamPrefix = "param/";
constexpr const char* kAdamMPrefix = "adam_m/";
constexpr const char* kAdamVPrefix = "adam_v/";

bool starts_with(const std::string& s, const char* prefix) { return s.rfind(prefix, 0) == 0; }

}  // namespace

void save_train_state(const std::filesystem::path& path, const TrainState& state) {
  ParamStore out;
  for (const auto& seg : state.params.segments()) out.add(kParamPrefix + seg.name, seg.value);
  for (const auto& seg : state.adam.m.segments()) out.add(kAdamMPrefix + seg.name, seg.value);
  for (const auto& seg : state.adam.v.segments()) out.add(kAdamVPrefix + seg.name, seg.value);
  const std::size_t k = state.stats.num_contexts();
  Tensor stats = Tensor::matrix(k, 3);
  for (std::size_t c = 0; c < k; ++c) {
    const auto& e = state.stats.entry(c);
    stats.at(c, 0) = e.count;
    stats.at(c, 1) = e.mean;
    stats.at(c, 2) = e.m2;
  }
  out.add("stats", stats);
  out.add("counters", Tensor({4}, {static_cast<double>(state.iteration),
                                   static_cast<double>(state.reward_queries),
                                   static_cast<double>(state.adam.step),
                                   static_cast<double>(state.failed_iterations)}));
  save_checkpoint(path, out);
}

TrainState load_train_state(const std::filesystem::path& path) {
  const ParamStore in = load_checkpoint(path);
  TrainState s;
  for (const auto& seg : in.segments()) {
    if (starts_with(seg.name, kParamPrefix)) {
      s.params.add(seg.name.substr(6), seg.value);
    } else if (starts_with(seg.name, kAdamMPrefix)) {
      s.adam.m.add(seg.name.substr(7), seg.value);
    } else if (starts_with(seg.name, kAdamVPrefix)) {
      s.adam.v.add(seg.name.substr(7), seg.value);
    }
  }
  if (s.params.empty() || !s.adam.m.same_layout(s.params) || !s.adam.v.same_layout(s.params)) {
    throw FormatError(path.string() + ": not a training state file");
  }
  const Tensor& stats = in.get("stats");
  s.stats = RewardStats(stats.rows());
  for (std::size_t c = 0; c < stats.rows(); ++c) {
    s.stats.entry(c) = {stats.at(c, 0), stats.at(c, 1), stats.at(c, 2)};
  }
  const Tensor& counters = in.get("counters");
  if (counters.size() != 4) throw FormatError(path.string() + ": bad counters segment");
  s.iteration = static_cast<std::uint64_t>(counters.values()[0]);
  s.reward_queries = static_cast<std::uint64_t>(counters.values()[1]);
  s.adam.step = static_cast<std::uint64_t>(counters.values()[2]);
  s.failed_iterations = static_cast<std::uint64_t>(counters.values()[3]);
  return s;
}

namespace {

std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_metrics_header(std::ostream& out, std::size_t num_contexts) {
  out << "iteration,reward_queries,mean_reward,std_reward,mean_advantage,clipped_fraction,"
         "invalid_count";
  for (std::size_t c = 0; c < num_contexts; ++c) out << ",reward_ctx" << c;
  out << '\n';
}

void write_metrics_row(std::ostream& out, const IterationMetrics& m) {
  out << m.iteration << ',' << m.reward_queries << ',' << fmt_double(m.mean_reward) << ','
      << fmt_double(m.std_reward) << ',' << fmt_double(m.mean_advantage) << ','
      << fmt_double(m.clipped_fraction) << ',' << m.invalid_count;
  for (double r : m.context_reward) out << ',' << fmt_double(r);
  out << '\n';
}

bool rwr_update(ParamStore& params, AdamWState& adam, const DdpmBatch& batch,
                const DenoiserSpec& spec, const NoiseSchedule& s, const GuidanceConfig& g,
                const AdamWConfig& opt, StreamRng& rng) {
  if (std::all_of(batch.weights.begin(), batch.weights.end(), [](double w) { return w == 0.0; }) &&
      !batch.weights.empty()) {
    return false;
  }
  ad::Tape tape;
  auto leaves = tape.bind(params);
  ad::Var loss = ddpm_loss(leaves, spec, batch, s, g, DdpmPhase::kFinetune, rng);
  adamw_step(params, tape.backward(loss), adam, opt);
  return true;
}

Trainer::Trainer(TrainConfig config, DenoiserSpec spec, NoiseSchedule schedule,
                 GuidanceConfig guidance, const RewardFunction& reward, ContextSampler contexts,
                 TrainState state)
    : config_(std::move(config)),
      spec_(std::move(spec)),
      schedule_(std::move(schedule)),
      guidance_(guidance),
      reward_(&reward),
      contexts_(contexts),
      state_(std::move(state)) {
  config_.validate();
  guidance_.weight = config_.guidance_weight;
  guidance_.validate();
  if (schedule_.steps() != config_.steps) {
    throw ConfigError("train steps do not match the noise schedule");
  }
  validate_mlp(state_.params, spec_.arch());
  if (state_.stats.num_contexts() != spec_.num_contexts) {
    throw ConfigError("reward statistics do not match the context count");
  }
  if (state_.adam.m.empty()) state_.adam = AdamWState::zeros_like(state_.params);
}

bool Trainer::apply(const ParamStore& loss_grad) {
  if (!loss_grad.all_finite()) return false;
  adamw_step(state_.params, loss_grad, state_.adam, config_.adam);
  return true;
}

IterationMetrics Trainer::step() {
  const std::uint64_t it = state_.iteration;
  update_log_.clear();
  const bool ddpo = config_.algorithm == Algorithm::kDdpoSf || config_.algorithm == Algorithm::kDdpoIs;
  RolloutOptions options{config_.seed, it, 0, config_.workers, ddpo};
  RolloutBatch batch = collect_trajectories(state_.params, spec_, schedule_, guidance_, contexts_,
                                            config_.samples_per_iter, options);
  score_batch(batch, *reward_, config_.workers);
  state_.reward_queries += batch.size();

  IterationMetrics m;
  m.iteration = it;
  m.reward_queries = state_.reward_queries;
  m.invalid_count = batch.invalid_count;
  m.context_reward.assign(spec_.num_contexts, std::numeric_limits<double>::quiet_NaN());
  if (batch.size() > 0) {
    std::vector<double> sums(spec_.num_contexts, 0.0);
    std::vector<double> counts(spec_.num_contexts, 0.0);
    double total = 0.0;
    for (const auto& traj : batch.trajectories) {
      total += *traj.reward;
      sums[static_cast<std::size_t>(traj.context)] += *traj.reward;
      counts[static_cast<std::size_t>(traj.context)] += 1.0;
    }
    m.mean_reward = total / static_cast<double>(batch.size());
    double ss = 0.0;
    for (const auto& traj : batch.trajectories) {
      ss += (*traj.reward - m.mean_reward) * (*traj.reward - m.mean_reward);
    }
    m.std_reward = std::sqrt(ss / static_cast<double>(batch.size()));
    for (std::size_t c = 0; c < spec_.num_contexts; ++c) {
      if (counts[c] > 0.0) m.context_reward[c] = sums[c] / counts[c];
    }
  }

  if (batch.size() == 0) {
    m.mean_reward = m.std_reward = std::numeric_limits<double>::quiet_NaN();
  } else if (ddpo) {
    m = ddpo_iteration(batch, m);
  } else {
    m = rwr_iteration(batch, m);
  }

  const bool failed = batch.size() == 0 || m.skipped_updates == config_.updates_per_iter;
  state_.failed_iterations = failed ? state_.failed_iterations + 1 : 0;
  state_.iteration += 1;
  if (state_.failed_iterations >= 3) {
    throw NumericalError("training aborted: three consecutive iterations without a finite update");
  }
  return m;
}

IterationMetrics Trainer::rwr_iteration(RolloutBatch& batch, IterationMetrics m) {
  const std::uint64_t it = state_.iteration;
  std::vector<double> rewards(batch.size());
  std::vector<int> contexts(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    rewards[i] = *batch.trajectories[i].reward;
    contexts[i] = batch.trajectories[i].context;
  }
  const auto weights = config_.algorithm == Algorithm::kRwr
                           ? rwr_weights_exp(rewards, contexts, config_.beta_rwr)
                           : rwr_weights_sparse(rewards, contexts, config_.percentile);
  const std::size_t d = spec_.data_dim;
  for (std::size_t u = 0; u < config_.updates_per_iter; ++u) {
    StreamRng pick(config_.seed, derive_stream({static_cast<std::uint64_t>(StreamTag::kMinibatch), it, u}));
    DdpmBatch mb{Tensor::matrix(config_.batch_size, d), std::vector<int>(config_.batch_size),
                 std::vector<double>(config_.batch_size)};
    for (std::size_t r = 0; r < config_.batch_size; ++r) {
      const std::size_t i = pick.below(batch.size());
      auto x0 = batch.trajectories[i].x0();
      std::copy(x0.begin(), x0.end(), mb.x0.row_span(r).begin());
      mb.contexts[r] = contexts[i];
      mb.weights[r] = weights[i];
    }
    StreamRng noise(config_.seed, derive_stream({static_cast<std::uint64_t>(StreamTag::kRwr), it, u}));
    try {
      if (!rwr_update(state_.params, state_.adam, mb, spec_, schedule_, guidance_, config_.adam,
                      noise)) {
        ++m.skipped_updates;
      }
    } catch (const NumericalError&) {
      ++m.skipped_updates;
    }
  }
  return m;
}

IterationMetrics Trainer::ddpo_iteration(RolloutBatch& batch, IterationMetrics m) {
  const std::uint64_t it = state_.iteration;
  std::vector<double> rewards(batch.size());
  std::vector<int> contexts(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    rewards[i] = *batch.trajectories[i].reward;
    contexts[i] = batch.trajectories[i].context;
  }
  Advantages adv;
  if (config_.advantage == AdvantageMode::kNormalized) {
    adv = normalize_rewards(rewards, contexts, state_.stats);
  } else {
    adv.values = rewards;
    adv.scales.assign(rewards.size(), 1.0);
  }
  assign_advantages(batch, adv);
  double adv_sum = 0.0;
  for (double a : adv.values) adv_sum += a;
  m.mean_advantage = adv_sum / static_cast<double>(adv.values.size());

  const PolicyModel model{&spec_, &schedule_, guidance_.weight};
  const EstimatorOptions est{config_.workers, config_.reward_path_gradient};

  if (config_.algorithm == Algorithm::kDdpoSf) {
    ParamStore g = ddpo_sf_gradient(batch, state_.params, model, est, reward_);
    g.scale(-1.0);
    if (!apply(g)) ++m.skipped_updates;
    return m;
  }

  const ParamStore theta_old = state_.params;
  const std::size_t n = batch.size();
  const std::size_t per_epoch = chunk_count(n, config_.batch_size);
  std::vector<std::size_t> order(n);
  std::size_t terms = 0;
  double clipped = 0.0;
  for (std::size_t u = 0; u < config_.updates_per_iter; ++u) {
    const std::size_t mb = u % per_epoch;
    if (mb == 0) {
      std::iota(order.begin(), order.end(), 0);
      StreamRng shuffle(config_.seed, derive_stream({static_cast<std::uint64_t>(StreamTag::kMinibatch),
                                                     it, u / per_epoch}));
      for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
    }
    const std::size_t begin = mb * config_.batch_size;
    const std::size_t end = std::min(n, begin + config_.batch_size);
    std::span<const std::size_t> rows(order.data() + begin, end - begin);
    IsResult res = ddpo_is_gradient(batch, rows, state_.params, theta_old, model,
                                    config_.clip_range, est, keep_log_, reward_);
    terms += res.diagnostics.terms;
    clipped += res.diagnostics.clipped_fraction * static_cast<double>(res.diagnostics.terms);
    res.gradient.scale(-1.0);
    if (!apply(res.gradient)) ++m.skipped_updates;
    if (keep_log_) update_log_.push_back(std::move(res.diagnostics));
  }
  m.clipped_fraction = terms > 0 ? clipped / static_cast<double>(terms) : 0.0;
  return m;
}

// ---------------------------------------------------------------------------
// Pretraining

ParamStore pretrain_ddpm(ParamStore params, const DenoiserSpec& spec, const NoiseSchedule& s,
                         const GuidanceConfig& g, DataDomain domain, const PretrainConfig& config,
                         const std::function<void(std::size_t, double)>& on_step) {
  validate_mlp(params, spec.arch());
  if (domain_dim(domain) != spec.data_dim) {
    throw ConfigError("data domain dimension does not match the model");
  }
  if (config.batch_size == 0) throw ConfigError("pretrain.batch_size must be positive");
  AdamWState adam = AdamWState::zeros_like(params);
  for (std::size_t step = 0; step < config.steps; ++step) {
    DdpmBatch batch = sample_data_batch(domain, spec.num_contexts, config.batch_size, config.seed, step);
    StreamRng rng(config.seed, derive_stream({static_cast<std::uint64_t>(StreamTag::kDdpmLoss), step}));
    ad::Tape tape;
    auto leaves = tape.bind(params);
    ad::Var loss = ddpm_loss(leaves, spec, batch, s, g, DdpmPhase::kPretrain, rng);
    adamw_step(params, tape.backward(loss), adam, config.adam);
    if (on_step) on_step(step, loss.value().values()[0]);
  }
  return params;
}

}  // namespace ddpolab
