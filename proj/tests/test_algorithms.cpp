// Copyright 2026 The ddpolab Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <sstream>

#include "ddpolab/algorithms.hpp"
#include "ddpolab/checkpoint.hpp"
#include "ddpolab/error.hpp"

using namespace ddpolab;
using Catch::Approx;

namespace {

struct Setup {
  DenoiserSpec spec;
  NoiseSchedule schedule;
  GuidanceConfig guidance;
  ParamStore params;
  std::unique_ptr<RewardFunction> reward;

  explicit Setup(int steps = 5, std::uint64_t seed = 2) {
    spec.data_dim = 2;
    spec.num_contexts = 2;
    spec.hidden = {8};
    spec.steps = steps;
    schedule = make_schedule(steps, default_beta_min(steps), default_beta_max(steps));
    params = init_denoiser(spec, seed);
    RewardSpec rs;
    rs.num_contexts = 2;
    rs.targets = {1.0, 0.5, -1.0, -0.5};
    reward = make_reward(rs);
  }

  PolicyModel model() const { return {&spec, &schedule, guidance.weight}; }

  RolloutBatch scored(std::size_t n, std::uint64_t seed = 7) const {
    RolloutBatch batch = collect_trajectories(params, spec, schedule, guidance,
                                              ContextSampler{2, -1}, n,
                                              RolloutOptions{seed, 0, 0, 1, true});
    score_batch(batch, *reward, 1);
    return batch;
  }

  TrainConfig config(Algorithm a) const {
    TrainConfig c = TrainConfig::defaults(a);
    c.steps = spec.steps;
    c.iterations = 2;
    c.adam.lr = 1e-3;
    c.seed = 5;
    if (a == Algorithm::kRwr || a == Algorithm::kRwrSparse) {
      c.samples_per_iter = 40;
      c.batch_size = 8;
      c.updates_per_iter = 3;
    } else {
      c.samples_per_iter = 70;
      c.batch_size = a == Algorithm::kDdpoSf ? 70 : 20;
    }
    return c;
  }

  Trainer trainer(const TrainConfig& c, TrainState state) const {
    return Trainer(c, spec, schedule, guidance, *reward, ContextSampler{2, -1}, std::move(state));
  }
};

Advantages normalize_fresh(const std::vector<double>& r, const std::vector<int>& c, std::size_t k) {
  RewardStats stats(k);
  return normalize_rewards(r, c, stats);
}

void set_advantages(RolloutBatch& batch, double value) {
  for (auto& traj : batch.trajectories) {
    traj.advantage = value;
    traj.advantage_scale = 0.0;
  }
}

double max_abs_diff(const ParamStore& a, const ParamStore& b) {
  const auto fa = a.flatten();
  const auto fb = b.flatten();
  double worst = 0.0;
  for (std::size_t i = 0; i < fa.size(); ++i) worst = std::max(worst, std::abs(fa[i] - fb[i]));
  return worst;
}

}  // namespace

TEST_CASE("reward normalization examples") {
  const auto a = normalize_fresh({1.0, 2.0, 3.0}, {0, 0, 0}, 1);
  const double s = std::sqrt(2.0 / 3.0);
  CHECK(a.values[0] == Approx(-1.0 / s).epsilon(1e-14));
  CHECK(a.values[1] == 0.0);
  CHECK(a.values[2] == Approx(1.0 / s).epsilon(1e-14));
  CHECK(a.scales[0] == Approx(1.0 / s).epsilon(1e-14));

  // A context with a single sample gets advantage 0.
  const auto b = normalize_fresh({1.0, 2.0, 3.0, 7.0}, {0, 0, 0, 1}, 2);
  CHECK(b.values[3] == 0.0);
  // Identical rewards: advantage 0, no division blow-up.
  const auto c = normalize_fresh({0.3, 0.3, 0.3}, {0, 0, 0}, 1);
  for (double v : c.values) CHECK(v == 0.0);

  RewardStats stats(1);
  CHECK_THROWS_AS(normalize_rewards(std::vector<double>{1.0}, std::vector<int>{1}, stats), DomainError);
  CHECK_THROWS_AS(normalize_rewards(std::vector<double>{NAN}, std::vector<int>{0}, stats), DomainError);
}

TEST_CASE("normalized advantages are invariant to affine reward changes") {
  StreamRng rng(3, 3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> r(40);
    std::vector<int> c(40);
    for (std::size_t i = 0; i < r.size(); ++i) {
      r[i] = rng.normal();
      c[i] = static_cast<int>(rng.below(3));
    }
    const double scale = 0.01 + 100.0 * rng.uniform();
    const double shift = 50.0 * rng.normal();
    std::vector<double> r2(r.size());
    for (std::size_t i = 0; i < r.size(); ++i) r2[i] = scale * r[i] + shift;
    const auto a = normalize_fresh(r, c, 3);
    const auto b = normalize_fresh(r2, c, 3);
    for (std::size_t i = 0; i < r.size(); ++i) CHECK(std::abs(a.values[i] - b.values[i]) < 1e-10);
    // Per-context mean zero, unit population variance.
    for (int k = 0; k < 3; ++k) {
      double sum = 0.0;
      double ss = 0.0;
      double n = 0.0;
      for (std::size_t i = 0; i < r.size(); ++i) {
        if (c[i] != k) continue;
        sum += a.values[i];
        ss += a.values[i] * a.values[i];
        n += 1.0;
      }
      if (n > 1.0) {
        CHECK(std::abs(sum / n) < 1e-12);
        CHECK(ss / n == Approx(1.0).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("running statistics merge like one pass over all rewards") {
  StreamRng rng(8, 1);
  RewardStats running(2);
  std::vector<double> all0;
  for (int round = 0; round < 5; ++round) {
    std::vector<double> r(30);
    std::vector<int> c(30);
    for (std::size_t i = 0; i < r.size(); ++i) {
      r[i] = 3.0 + rng.normal();
      c[i] = static_cast<int>(rng.below(2));
      if (c[i] == 0) all0.push_back(r[i]);
    }
    normalize_rewards(r, c, running);
  }
  const auto ref = RewardStats::summarize(all0);
  CHECK(running.entry(0).count == ref.count);
  CHECK(running.entry(0).mean == Approx(ref.mean).epsilon(1e-12));
  CHECK(running.entry(0).m2 == Approx(ref.m2).epsilon(1e-10));
  CHECK(to_string(parse_advantage_mode("raw")) == "raw");
  CHECK_THROWS_AS(parse_advantage_mode("whitened"), ConfigError);
}

TEST_CASE("softmax weights") {
  const auto w = softmax_weights(std::vector<double>{0.0, 5.0}, 0.2);
  CHECK(w[0] == Approx(0.2689414213699951).epsilon(1e-14));
  CHECK(w[1] == Approx(0.7310585786300049).epsilon(1e-14));
  StreamRng rng(1, 9);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> r(1 + rng.below(50));
    for (double& v : r) v = 1000.0 * rng.normal();
    const auto a = softmax_weights(r, 0.2);
    CHECK(std::abs(std::accumulate(a.begin(), a.end(), 0.0) - 1.0) < 1e-12);
    std::vector<double> shifted = r;
    for (double& v : shifted) v += 12345.0;
    const auto b = softmax_weights(shifted, 0.2);
    for (std::size_t i = 0; i < r.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-12);
    for (double v : a) CHECK(std::isfinite(v));
  }
  CHECK_THROWS_AS(softmax_weights(std::vector<double>{1.0}, 0.0), DomainError);
}

TEST_CASE("sparse weights keep the top share") {
  std::vector<double> r(10);
  std::iota(r.begin(), r.end(), 1.0);
  const auto w = sparse_weights(r, 0.9);
  CHECK(w == std::vector<double>{0, 0, 0, 0, 0, 0, 0, 0, 0, 1});
  StreamRng rng(2, 2);
  for (std::size_t n = 1; n <= 1000; ++n) {
    std::vector<double> v(n);
    for (double& x : v) x = std::floor(4.0 * rng.uniform());  // many ties
    for (double p : {0.0, 0.5, 0.9}) {
      const auto s = sparse_weights(v, p);
      const double kept = std::accumulate(s.begin(), s.end(), 0.0);
      CHECK(kept == static_cast<double>(n - static_cast<std::size_t>(std::floor(p * n))));
      double lowest_kept = INFINITY;
      double highest_dropped = -INFINITY;
      for (std::size_t i = 0; i < n; ++i) {
        if (s[i] == 1.0) lowest_kept = std::min(lowest_kept, v[i]);
        if (s[i] == 0.0) highest_dropped = std::max(highest_dropped, v[i]);
      }
      CHECK(highest_dropped <= lowest_kept);
    }
  }
  // Ties resolve by position: later entries survive.
  CHECK(sparse_weights(std::vector<double>{1.0, 1.0, 1.0, 1.0}, 0.5) ==
        std::vector<double>{0, 0, 1, 1});
  CHECK_THROWS_AS(sparse_weights(std::vector<double>{}, 0.5), DomainError);
  CHECK_THROWS_AS(sparse_weights(r, 1.0), DomainError);
}

TEST_CASE("reward-weighted regression weights are computed per context") {
  const std::vector<double> r{1.0, 5.0, 2.0, 0.0};
  const std::vector<int> c{0, 1, 0, 1};
  const auto w = rwr_weights_exp(r, c, 1.0);
  CHECK(w[0] + w[2] == Approx(1.0));
  CHECK(w[1] + w[3] == Approx(1.0));
  CHECK(w[2] / w[0] == Approx(std::exp(1.0)));
  const auto s = rwr_weights_sparse(r, c, 0.5);
  CHECK(s == std::vector<double>{0, 1, 1, 0});
}

TEST_CASE("AdamW step") {
  ParamStore p;
  p.add("w", Tensor::scalar(0.5));
  ParamStore g = p.zeros_like();
  g.flat(0) = 1.0;
  AdamWState st = AdamWState::zeros_like(p);
  AdamWConfig cfg;
  CHECK(adamw_step(p, g, st, cfg) == 1.0);
  CHECK(p.flat(0) == Approx(0.49998999950010004).epsilon(1e-15));
  CHECK(st.step == 1);

  // Zero gradient: only decoupled decay.
  ParamStore q;
  q.add("w", Tensor::scalar(2.0));
  AdamWState sq = AdamWState::zeros_like(q);
  adamw_step(q, q.zeros_like(), sq, cfg);
  CHECK(q.flat(0) == 2.0 * (1.0 - 1e-5 * 1e-4));

  // Clipping rescales the gradient to unit norm.
  ParamStore r;
  r.add("w", Tensor::row(std::vector<double>{0.0, 0.0}));
  ParamStore big = r.zeros_like();
  big.flat(0) = 6.0;
  big.flat(1) = 8.0;
  AdamWState sr = AdamWState::zeros_like(r);
  CHECK(adamw_step(r, big, sr, cfg) == 10.0);
  CHECK(sr.m.flat(0) == Approx(0.1 * 0.6).epsilon(1e-14));
  CHECK(sr.m.flat(1) == Approx(0.1 * 0.8).epsilon(1e-14));

  big.flat(0) = NAN;
  CHECK_THROWS_AS(adamw_step(r, big, sr, cfg), NumericalError);
  ParamStore other;
  other.add("v", Tensor::scalar(1.0));
  CHECK_THROWS_AS(adamw_step(r, other, sr, cfg), ShapeError);
}

TEST_CASE("score-function estimator basics") {
  const Setup s;
  RolloutBatch batch = s.scored(20);
  set_advantages(batch, 0.0);
  const EstimatorOptions opts;
  const ParamStore zero = ddpo_sf_gradient(batch, s.params, s.model(), opts, nullptr);
  CHECK(zero.squared_norm() == 0.0);

  // One trajectory: A * sum_t grad log p.
  RolloutBatch one = batch;
  one.trajectories.resize(1);
  one.trajectories[0].advantage = 1.7;
  const std::vector<std::size_t> rows{0};
  const ParamStore ref = ad::gradient(
      [&](ad::Tape&, std::span<const ad::Var> leaves) {
        std::optional<ad::Var> acc;
        for (auto& [k, v] : recompute_logps(leaves, s.spec, s.schedule, s.guidance.weight, one, rows)) {
          acc = acc ? *acc + ad::sum(v) : ad::sum(v);
        }
        return *acc;
      },
      s.params);
  const ParamStore got = ddpo_sf_gradient(one, s.params, s.model(), opts, nullptr);
  const auto fr = ref.flatten();
  const auto fg = got.flatten();
  for (std::size_t i = 0; i < fr.size(); ++i) CHECK(fg[i] == Approx(1.7 * fr[i]).margin(1e-12));

  ParamStore moved = s.params;
  moved.flat(0) += 1e-3;
  CHECK_THROWS_AS(ddpo_sf_gradient(batch, moved, s.model(), opts, nullptr), DomainError);
}

TEST_CASE("score-function gradient does not depend on the worker count") {
  const Setup s;
  RolloutBatch batch = s.scored(150);
  const auto adv = normalize_fresh(
      [&] {
        std::vector<double> r;
        for (auto& t : batch.trajectories) r.push_back(*t.reward);
        return r;
      }(),
      [&] {
        std::vector<int> c;
        for (auto& t : batch.trajectories) c.push_back(t.context);
        return c;
      }(),
      2);
  assign_advantages(batch, adv);
  const ParamStore a = ddpo_sf_gradient(batch, s.params, s.model(), {1, true}, s.reward.get());
  const ParamStore b = ddpo_sf_gradient(batch, s.params, s.model(), {3, true}, s.reward.get());
  CHECK(a == b);
}

TEST_CASE("importance-sampled estimator equals score function at the sampling parameters") {
  const Setup s;
  RolloutBatch batch = s.scored(100);
  StreamRng rng(4, 4);
  for (auto& traj : batch.trajectories) {
    traj.advantage = rng.normal();
    traj.advantage_scale = 0.5;
  }
  std::vector<std::size_t> rows(batch.size());
  std::iota(rows.begin(), rows.end(), 0);
  for (bool path : {false, true}) {
    const EstimatorOptions opts{1, path};
    const ParamStore sf = ddpo_sf_gradient(batch, s.params, s.model(), opts, s.reward.get());
    const IsResult is =
        ddpo_is_gradient(batch, rows, s.params, s.params, s.model(), 1e-4, opts, false, s.reward.get());
    CHECK(max_abs_diff(sf, is.gradient) < 1e-10);
    CHECK(is.diagnostics.clipped_fraction == 0.0);
    CHECK(is.diagnostics.excluded == 0);
  }
}

TEST_CASE("clipping removes the gradient of terms outside the trust region") {
  const Setup s(2);
  REQUIRE(s.schedule.stochastic(2));
  REQUIRE_FALSE(s.schedule.stochastic(1));
  RolloutBatch base = s.scored(1);
  const std::vector<std::size_t> rows{0};
  const EstimatorOptions opts{1, false};
  // Make the current ratio exactly 1.001 at the only stochastic step.
  RolloutBatch batch = base;
  batch.trajectories[0].logps[0] -= std::log(1.001);

  batch.trajectories[0].advantage = 1.0;
  IsResult pos = ddpo_is_gradient(batch, rows, s.params, s.params, s.model(), 1e-4, opts, true);
  REQUIRE(pos.diagnostics.log.size() == 1);
  CHECK(pos.diagnostics.log[0].ratio == Approx(1.001).epsilon(1e-12));
  CHECK(pos.diagnostics.log[0].clipped_ratio == Approx(1.0001).epsilon(1e-12));
  CHECK_FALSE(pos.diagnostics.log[0].contributes);
  CHECK(pos.gradient.squared_norm() == 0.0);
  CHECK(pos.diagnostics.clipped_fraction == 1.0);
  CHECK(pos.diagnostics.objective == Approx(1.0001).epsilon(1e-12));

  batch.trajectories[0].advantage = -1.0;
  IsResult neg = ddpo_is_gradient(batch, rows, s.params, s.params, s.model(), 1e-4, opts, true);
  CHECK(neg.diagnostics.log[0].contributes);
  CHECK(neg.gradient.squared_norm() > 0.0);
  // The pessimistic branch carries the full ratio: -1.001 * grad log p.
  RolloutBatch plain = base;
  plain.trajectories[0].advantage = -1.0;
  const ParamStore sf = ddpo_sf_gradient(plain, s.params, s.model(), opts, nullptr);
  const auto fs = sf.flatten();
  const auto fn = neg.gradient.flatten();
  for (std::size_t i = 0; i < fs.size(); ++i) CHECK(fn[i] == Approx(1.001 * fs[i]).margin(1e-12));

  batch.trajectories[0].advantage = 0.0;
  IsResult zero = ddpo_is_gradient(batch, rows, s.params, s.params, s.model(), 1e-4, opts);
  CHECK(zero.gradient.squared_norm() == 0.0);

  ParamStore other = s.params;
  other.flat(3) += 0.1;
  CHECK_THROWS_AS(ddpo_is_gradient(batch, rows, s.params, other, s.model(), 1e-4, opts), DomainError);
  CHECK_THROWS_AS(ddpo_is_gradient(batch, rows, s.params, s.params, s.model(), 0.0, opts), DomainError);
}

TEST_CASE("non-finite ratios are excluded and counted") {
  const Setup s(3);
  RolloutBatch batch = s.scored(4);
  for (auto& traj : batch.trajectories) traj.advantage = 1.0;
  batch.trajectories[2].logps[0] = -1e6;  // exp overflows
  std::vector<std::size_t> rows{0, 1, 2, 3};
  const IsResult r =
      ddpo_is_gradient(batch, rows, s.params, s.params, s.model(), 1e-4, {1, false}, false);
  CHECK(r.diagnostics.excluded == 1);
  CHECK(r.gradient.all_finite());
}

TEST_CASE("weighted regression update") {
  const Setup s;
  DdpmBatch batch = sample_data_batch(DataDomain::kPoints, 2, 5, 1, 0);
  AdamWConfig opt;
  opt.lr = 1e-3;

  batch.weights.assign(5, 0.0);
  ParamStore p = s.params;
  AdamWState st = AdamWState::zeros_like(p);
  StreamRng rng(1, 1);
  CHECK_FALSE(rwr_update(p, st, batch, s.spec, s.schedule, s.guidance, opt, rng));
  CHECK(p == s.params);
  CHECK(st.step == 0);

  // One-hot weight on row 0 equals an update on row 0 alone (row 0 draws first).
  batch.weights = {1.0, 0.0, 0.0, 0.0, 0.0};
  StreamRng r1(2, 2);
  CHECK(rwr_update(p, st, batch, s.spec, s.schedule, s.guidance, opt, r1));
  DdpmBatch single{Tensor::matrix(1, 2), {batch.contexts[0]}, {}};
  single.x0.at(0, 0) = batch.x0.at(0, 0);
  single.x0.at(0, 1) = batch.x0.at(0, 1);
  ParamStore q = s.params;
  AdamWState sq = AdamWState::zeros_like(q);
  StreamRng r2(2, 2);
  CHECK(rwr_update(q, sq, single, s.spec, s.schedule, s.guidance, opt, r2));
  CHECK(max_abs_diff(p, q) < 1e-12);
}

TEST_CASE("training configuration defaults and validation") {
  const auto is = TrainConfig::defaults(Algorithm::kDdpoIs);
  CHECK(is.samples_per_iter == 256);
  CHECK(is.batch_size == 64);
  CHECK(is.updates_per_iter == 4);
  CHECK(is.clip_range == 1e-4);
  CHECK(is.adam.lr == 1e-5);
  CHECK(is.adam.weight_decay == 1e-4);
  CHECK(is.guidance_weight == 5.0);
  CHECK(is.steps == 50);
  const auto sf = TrainConfig::defaults(Algorithm::kDdpoSf);
  CHECK(sf.batch_size == 256);
  CHECK(sf.updates_per_iter == 1);
  const auto rwr = TrainConfig::defaults(Algorithm::kRwr);
  CHECK(rwr.samples_per_iter == 10000);
  CHECK(rwr.batch_size == 128);
  CHECK(rwr.updates_per_iter == 400);
  CHECK(rwr.beta_rwr == 0.2);
  CHECK(TrainConfig::defaults(Algorithm::kRwrSparse).percentile == 0.9);

  TrainConfig bad = sf;
  bad.updates_per_iter = 2;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = is;
  bad.clip_range = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  for (auto a : {Algorithm::kRwr, Algorithm::kRwrSparse, Algorithm::kDdpoSf, Algorithm::kDdpoIs}) {
    CHECK(parse_algorithm(to_string(a)) == a);
  }
  CHECK_THROWS_AS(parse_algorithm("ppo"), ConfigError);
}

TEST_CASE("training state persists exactly") {
  const Setup s;
  Trainer t = s.trainer(s.config(Algorithm::kDdpoIs), TrainState::fresh(s.params, 2));
  t.step();
  const auto path = std::filesystem::temp_directory_path() / "ddpolab_test_state.ckpt";
  save_train_state(path, t.state());
  CHECK(load_train_state(path) == t.state());
  save_checkpoint(path, s.params);
  CHECK_THROWS_AS(load_train_state(path), FormatError);
  std::filesystem::remove(path);
}

TEST_CASE("resuming from a saved state continues the same run") {
  const Setup s;
  const auto path = std::filesystem::temp_directory_path() / "ddpolab_test_resume.ckpt";
  for (auto a : {Algorithm::kRwr, Algorithm::kRwrSparse, Algorithm::kDdpoSf, Algorithm::kDdpoIs}) {
    const TrainConfig c = s.config(a);
    Trainer straight = s.trainer(c, TrainState::fresh(s.params, 2));
    straight.step();
    straight.step();

    Trainer first = s.trainer(c, TrainState::fresh(s.params, 2));
    first.step();
    save_train_state(path, first.state());
    Trainer second = s.trainer(c, load_train_state(path));
    second.step();
    CHECK(second.state() == straight.state());
    CHECK(straight.state().iteration == 2);
    CHECK(straight.state().params != s.params);
  }
  std::filesystem::remove(path);
}

TEST_CASE("training results do not depend on the worker count") {
  const Setup s;
  for (auto a : {Algorithm::kRwr, Algorithm::kDdpoIs}) {
    TrainConfig c = s.config(a);
    Trainer one = s.trainer(c, TrainState::fresh(s.params, 2));
    c.workers = 3;
    Trainer three = s.trainer(c, TrainState::fresh(s.params, 2));
    one.step();
    three.step();
    CHECK(one.state() == three.state());
  }
}

TEST_CASE("clipped surrogate log covers every update") {
  const Setup s;
  TrainConfig c = s.config(Algorithm::kDdpoIs);
  Trainer t = s.trainer(c, TrainState::fresh(s.params, 2));
  t.set_keep_update_log(true);
  const IterationMetrics m = t.step();
  REQUIRE(t.update_log().size() == c.updates_per_iter);
  // The first update runs at the sampling parameters: every ratio is 1.
  for (const auto& term : t.update_log()[0].log) CHECK(term.ratio == Approx(1.0).margin(1e-12));
  CHECK(m.reward_queries == c.samples_per_iter);
  CHECK(m.clipped_fraction >= 0.0);
  CHECK(m.clipped_fraction <= 1.0);
}

TEST_CASE("metrics rows") {
  std::ostringstream out;
  write_metrics_header(out, 2);
  IterationMetrics m;
  m.iteration = 3;
  m.reward_queries = 768;
  m.mean_reward = -0.5;
  m.context_reward = {0.25, NAN};
  write_metrics_row(out, m);
  CHECK(out.str() ==
        "iteration,reward_queries,mean_reward,std_reward,mean_advantage,clipped_fraction,"
        "invalid_count,reward_ctx0,reward_ctx1\n3,768,-0.5,0,0,0,0,0.25,nan\n");
}

TEST_CASE("pretraining lowers the denoising loss") {
  Setup s(10);
  std::vector<double> losses;
  PretrainConfig cfg;
  cfg.steps = 300;
  cfg.batch_size = 64;
  pretrain_ddpm(s.params, s.spec, s.schedule, s.guidance, DataDomain::kPoints, cfg,
                [&](std::size_t, double loss) { losses.push_back(loss); });
  REQUIRE(losses.size() == 300);
  const double early = std::accumulate(losses.begin(), losses.begin() + 30, 0.0) / 30.0;
  const double late = std::accumulate(losses.end() - 30, losses.end(), 0.0) / 30.0;
  CHECK(late < 0.5 * early);
}
