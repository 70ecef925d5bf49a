// Copyright 2026 The ddpolab Authors
// SPDX-License-Identifier: Apache-2.0

// Runs the acceptance criteria and prints one PASS/FAIL line per criterion.
// Usage: acceptance [criterion numbers...]  (all when none are given)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ddpolab/algorithms.hpp"
#include "ddpolab/checkpoint.hpp"
#include "ddpolab/checks.hpp"
#include "ddpolab/codec.hpp"
#include "ddpolab/data.hpp"
#include "ddpolab/parallel.hpp"
#include "ddpolab/schedule.hpp"

namespace fs = std::filesystem;
using namespace ddpolab;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

NoiseSchedule schedule_for(int steps) {
  return make_schedule(steps, default_beta_min(steps), default_beta_max(steps));
}

DenoiserSpec make_spec(std::size_t dim, std::size_t contexts, std::vector<std::size_t> hidden,
                       int steps) {
  DenoiserSpec spec;
  spec.data_dim = dim;
  spec.num_contexts = contexts;
  spec.hidden = std::move(hidden);
  spec.steps = steps;
  return spec;
}

ParamStore pretrained(const DenoiserSpec& spec, DataDomain domain, std::size_t steps) {
  PretrainConfig pc;
  pc.steps = steps;
  pc.seed = 3;
  return pretrain_ddpm(init_denoiser(spec, 7), spec, schedule_for(spec.steps), GuidanceConfig{},
                       domain, pc);
}

std::unique_ptr<RewardFunction> points_reward() {
  RewardSpec rs;
  rs.num_contexts = 2;
  rs.targets = {1.2, 0.8, -0.9, -1.1};
  return make_reward(rs);
}

double mean_eval_reward(const ParamStore& params, const DenoiserSpec& spec,
                        const RewardFunction& reward, std::size_t n, std::uint64_t seed) {
  RolloutBatch eval = collect_trajectories(
      params, spec, schedule_for(spec.steps), GuidanceConfig{},
      ContextSampler{spec.num_contexts, -1}, n,
      RolloutOptions{seed, static_cast<std::uint64_t>(StreamTag::kSample), 0, 1, false});
  score_batch(eval, reward, 1);
  double total = 0.0;
  for (const auto& traj : eval.trajectories) total += *traj.reward;
  return total / static_cast<double>(eval.size());
}

std::vector<std::uint8_t> file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// --- 1 -------------------------------------------------------------------

Outcome gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto results = ddpm_checks(100);
  const double elapsed = seconds_since(t0);
  std::string detail;
  for (const auto& r : results) detail += fmt("%s max rel err %.3g; ", r.name.c_str(), r.value);
  detail += fmt("100 models in %.1fs (limit 60s)", elapsed);
  return {all_passed(results) && elapsed < 60.0, detail};
}

// --- 2 -------------------------------------------------------------------

Outcome estimator_unbiasedness() {
  const auto t0 = std::chrono::steady_clock::now();
  EstimatorCheckOptions options;
  const CheckResult r = estimator_check(options);
  return {r.passed(),
          fmt("%.1f%% of components within %.0f standard errors over %zu trajectories "
              "(need %.0f%%), %.0fs",
              100.0 * r.value, options.sigmas, options.sf_batches * options.sf_batch_size,
              100.0 * options.required_agreement, seconds_since(t0))};
}

// --- 3 -------------------------------------------------------------------

Outcome estimator_equivalence() {
  const DenoiserSpec spec = make_spec(2, 2, {16, 16}, 10);
  const NoiseSchedule s = schedule_for(spec.steps);
  const GuidanceConfig g;
  const auto reward = points_reward();
  const PolicyModel model{&spec, &s, g.weight};
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const ParamStore params = init_denoiser(spec, seed);
    RolloutBatch batch = collect_trajectories(params, spec, s, g, ContextSampler{2, -1}, 128,
                                              RolloutOptions{seed, 0, 0, 1, true});
    score_batch(batch, *reward, 1);
    std::vector<double> rewards;
    std::vector<int> contexts;
    for (const auto& t : batch.trajectories) {
      rewards.push_back(*t.reward);
      contexts.push_back(t.context);
    }
    RewardStats stats(2);
    assign_advantages(batch, normalize_rewards(rewards, contexts, stats));
    std::vector<std::size_t> rows(batch.size());
    std::iota(rows.begin(), rows.end(), 0);
    const EstimatorOptions opts;
    const auto sf = ddpo_sf_gradient(batch, params, model, opts, reward.get()).flatten();
    const auto is =
        ddpo_is_gradient(batch, rows, params, params, model, 1e-4, opts, false, reward.get())
            .gradient.flatten();
    double diff = 0.0;
    double scale = 0.0;
    for (std::size_t i = 0; i < sf.size(); ++i) {
      diff = std::max(diff, std::abs(sf[i] - is[i]));
      scale = std::max(scale, std::abs(sf[i]));
    }
    worst = std::max(worst, diff / scale);
  }
  return {worst <= 1e-10, fmt("worst relative difference %.3g over 20 batches (limit 1e-10)", worst)};
}

// --- 4 -------------------------------------------------------------------

Outcome clipping_contract() {
  const DenoiserSpec spec = make_spec(2, 2, {16, 16}, 10);
  const auto reward = points_reward();
  TrainConfig tc = TrainConfig::defaults(Algorithm::kDdpoIs);
  tc.steps = spec.steps;
  tc.adam.lr = 3e-4;
  tc.seed = 11;
  Trainer trainer(tc, spec, schedule_for(spec.steps), GuidanceConfig{}, *reward,
                  ContextSampler{2, -1}, TrainState::fresh(pretrained(spec, DataDomain::kPoints, 300), 2));
  trainer.set_keep_update_log(true);
  const double lo = 1.0 - tc.clip_range;
  const double hi = 1.0 + tc.clip_range;
  bool first_unclipped = true;
  bool later_clipped = true;
  std::size_t terms = 0;
  std::size_t bad_clip = 0;
  std::size_t bad_branch = 0;
  std::size_t pessimistic = 0;
  double max_later = 0.0;
  for (int it = 0; it < 3; ++it) {
    const IterationMetrics m = trainer.step();
    if (m.skipped_updates != 0) return {false, fmt("iteration %d skipped updates", it)};
    const auto& log = trainer.update_log();
    first_unclipped = first_unclipped && log.at(0).clipped_fraction == 0.0;
    double later = 0.0;
    for (std::size_t u = 1; u < log.size(); ++u) later = std::max(later, log[u].clipped_fraction);
    later_clipped = later_clipped && later > 0.0;
    max_later = std::max(max_later, later);
    for (const auto& diag : log) {
      for (const SurrogateTerm& t : diag.log) {
        ++terms;
        if (t.clipped_ratio < lo || t.clipped_ratio > hi) ++bad_clip;
        const bool inside = t.ratio >= lo && t.ratio <= hi;
        const bool on_pessimistic_side = t.ratio * t.advantage < t.clipped_ratio * t.advantage;
        // Outside the band the raw ratio only carries gradient on the pessimistic side.
        if (!inside && t.contributes != on_pessimistic_side) ++bad_branch;
        if (inside && !t.contributes) ++bad_branch;
        if (!inside && t.contributes) ++pessimistic;
      }
    }
  }
  return {first_unclipped && later_clipped && bad_clip == 0 && bad_branch == 0 && terms > 0,
          fmt("first update clipped fraction 0: %s; later updates up to %.3f; %zu logged terms, "
              "%zu clipped ratios outside [0.9999, 1.0001], %zu branch violations, %zu "
              "pessimistic out-of-band terms",
              first_unclipped ? "yes" : "no", max_later, terms, bad_clip, bad_branch, pessimistic)};
}

// --- 5 -------------------------------------------------------------------

Outcome algorithm_ordering() {
  const auto t0 = std::chrono::steady_clock::now();
  const DenoiserSpec spec = make_spec(2, 2, {32, 32}, 50);
  const NoiseSchedule s = schedule_for(spec.steps);
  const ParamStore base = pretrained(spec, DataDomain::kPoints, 3000);
  const auto reward = points_reward();
  constexpr std::uint64_t kBudget = 50000;
  const Algorithm order[] = {Algorithm::kDdpoIs, Algorithm::kDdpoSf, Algorithm::kRwr,
                             Algorithm::kRwrSparse};
  int holds = 0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    double final_reward[4];
    for (int a = 0; a < 4; ++a) {
      TrainConfig tc = TrainConfig::defaults(order[a]);
      tc.steps = spec.steps;
      tc.adam.lr = 3e-4;
      tc.seed = seed;
      Trainer trainer(tc, spec, s, GuidanceConfig{}, *reward, ContextSampler{2, -1},
                      TrainState::fresh(base, 2));
      while (trainer.state().reward_queries < kBudget) trainer.step();
      final_reward[a] = mean_eval_reward(trainer.state().params, spec, *reward, 2000, seed);
    }
    const bool ok = final_reward[0] >= final_reward[1] && final_reward[1] > final_reward[2] &&
                    final_reward[1] > final_reward[3];
    holds += ok ? 1 : 0;
    detail += fmt("seed %d is %.4f sf %.4f rwr %.4f sparse %.4f%s; ", static_cast<int>(seed),
                  final_reward[0], final_reward[1], final_reward[2], final_reward[3],
                  ok ? "" : " (violated)");
  }
  detail += fmt("ordering holds in %d/5 seeds (need 4), %.0fs", holds, seconds_since(t0));
  return {holds >= 4, detail};
}

// --- 6 -------------------------------------------------------------------

Outcome compressibility_finetuning() {
  const auto t0 = std::chrono::steady_clock::now();
  const DenoiserSpec spec = make_spec(64, 4, {128, 128}, 50);
  const NoiseSchedule s = schedule_for(spec.steps);
  const ParamStore base = pretrained(spec, DataDomain::kImages, 3000);
  bool ok = true;
  std::string detail;
  for (RewardKind kind : {RewardKind::kCompress, RewardKind::kIncompress}) {
    RewardSpec rs;
    rs.kind = kind;
    rs.num_contexts = 4;
    rs.data_dim = 64;
    const auto reward = make_reward(rs);
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      TrainConfig tc = TrainConfig::defaults(Algorithm::kDdpoIs);
      tc.steps = spec.steps;
      tc.adam.lr = 1e-4;
      tc.seed = seed;
      Trainer trainer(tc, spec, s, GuidanceConfig{}, *reward, ContextSampler{4, -1},
                      TrainState::fresh(base, 4));
      for (int it = 0; it < 40; ++it) trainer.step();
      const double before = mean_eval_reward(base, spec, *reward, 1024, seed);
      const double after = mean_eval_reward(trainer.state().params, spec, *reward, 1024, seed);
      const double gain = (after - before) / std::abs(before);
      ok = ok && gain >= 0.2;
      detail += fmt("%s seed %d %.4f -> %.4f kB-reward (%+.1f%%); ", to_string(kind).c_str(),
                    static_cast<int>(seed), before, after, 100.0 * gain);
    }
  }
  detail += fmt("need +20%% in every run, %.0fs", seconds_since(t0));
  return {ok, detail};
}

// --- 7 -------------------------------------------------------------------

Outcome rwr_weighting_laws() {
  StreamRng rng(7, static_cast<std::uint64_t>(StreamTag::kOracle));
  double worst_sum = 0.0;
  double worst_shift = 0.0;
  for (std::size_t n : {1, 2, 5, 64, 1000}) {
    for (double beta : {0.2, 1.0, 25.0}) {
      std::vector<double> r(n);
      rng.fill_normal(r);
      const auto w = softmax_weights(r, beta);
      worst_sum = std::max(worst_sum, std::abs(std::accumulate(w.begin(), w.end(), 0.0) - 1.0));
      for (double shift : {-1e3, 3.5, 1e3}) {
        std::vector<double> shifted = r;
        for (double& v : shifted) v += shift;
        const auto ws = softmax_weights(shifted, beta);
        for (std::size_t i = 0; i < n; ++i) worst_shift = std::max(worst_shift, std::abs(w[i] - ws[i]));
      }
    }
  }
  std::size_t keep_errors = 0;
  std::size_t cases = 0;
  const double percentiles[] = {0.0, 0.1, 0.25, 0.333, 0.5, 0.75, 0.9, 0.95, 0.99, 0.999};
  for (std::size_t n = 1; n <= 1000; ++n) {
    std::vector<double> r(n);
    rng.fill_normal(r);
    for (double p : percentiles) {
      const auto w = sparse_weights(r, p);
      const auto kept = static_cast<std::size_t>(std::count(w.begin(), w.end(), 1.0));
      const auto expected = n - static_cast<std::size_t>(std::floor(p * static_cast<double>(n)));
      ++cases;
      if (kept != expected) ++keep_errors;
    }
  }
  return {worst_sum <= 1e-12 && worst_shift <= 1e-12 && keep_errors == 0,
          fmt("softmax |sum-1| max %.3g, shift change max %.3g; sparse keep-count wrong in "
              "%zu of %zu cases (n=1..1000)",
              worst_sum, worst_shift, keep_errors, cases)};
}

// --- 8 -------------------------------------------------------------------

class ScaledReward final : public RewardFunction {
 public:
  ScaledReward(const RewardFunction& inner, double factor) : inner_(inner), factor_(factor) {}
  double operator()(std::span<const double> x0, int context) const override {
    return factor_ * inner_(x0, context);
  }
  bool has_gradient() const override { return inner_.has_gradient(); }
  void gradient(std::span<const double> x0, int context, std::span<double> out) const override {
    inner_.gradient(x0, context, out);
    for (double& v : out) v *= factor_;
  }
  std::string name() const override { return "scaled_" + inner_.name(); }

 private:
  const RewardFunction& inner_;
  double factor_;
};

Outcome normalization_law() {
  const DenoiserSpec spec = make_spec(2, 2, {16, 16}, 10);
  const NoiseSchedule s = schedule_for(spec.steps);
  const ParamStore base = pretrained(spec, DataDomain::kPoints, 300);
  const auto reward = points_reward();
  double worst = 0.0;
  for (Algorithm a : {Algorithm::kDdpoIs, Algorithm::kDdpoSf}) {
    TrainConfig tc = TrainConfig::defaults(a);
    tc.steps = spec.steps;
    tc.adam.lr = 3e-4;
    tc.seed = 5;
    auto run = [&](const RewardFunction& r) {
      Trainer trainer(tc, spec, s, GuidanceConfig{}, r, ContextSampler{2, -1},
                      TrainState::fresh(base, 2));
      trainer.step();
      ParamStore delta = trainer.state().params;
      delta.axpy(-1.0, base);
      return delta.flatten();
    };
    const auto reference = run(*reward);
    for (double factor : {1e-3, 0.5, 7.0, 1e3}) {
      const auto scaled = run(ScaledReward(*reward, factor));
      for (std::size_t i = 0; i < reference.size(); ++i) {
        worst = std::max(worst, std::abs(reference[i] - scaled[i]));
      }
    }
  }
  return {worst <= 1e-10,
          fmt("max update difference %.3g for reward scales 1e-3..1e3, DDPO-IS and DDPO-SF "
              "(limit 1e-10)",
              worst)};
}

// --- 9 -------------------------------------------------------------------

Outcome codec_determinism() {
  constexpr std::size_t kImages = 1000;
  constexpr int kQuality = 95;
  std::vector<CodecImage> corpus;
  std::vector<double> values(kImageSide * kImageSide);
  for (std::size_t i = 0; i < kImages; ++i) {
    StreamRng rng(9, derive_stream({static_cast<std::uint64_t>(StreamTag::kData), i}));
    sample_example(DataDomain::kImages, 4, static_cast<int>(i % 4), rng, values);
    corpus.push_back(render_to_image(values));
  }
  const fs::path path = fs::temp_directory_path() / "ddpolab_acceptance_corpus.bin";
  write_image_corpus(path, corpus);
  const auto reread = read_image_corpus(path);
  fs::remove(path);

  auto encode_all = [&](const std::vector<CodecImage>& images, int workers) {
    std::vector<std::vector<std::uint8_t>> out(images.size());
    parallel_for(images.size(), workers, [&](std::size_t i) { out[i] = codec_encode(images[i], kQuality); });
    return out;
  };
  const auto first = encode_all(corpus, 1);
  const bool repeat = encode_all(corpus, 1) == first;
  const bool workers = encode_all(corpus, 4) == first;
  const bool from_disk = encode_all(reread, 4) == first;

  CodecImage flat{8, 8, std::vector<std::uint8_t>(64, 128)};
  CodecImage noise{8, 8, std::vector<std::uint8_t>(64)};
  StreamRng rng(9, static_cast<std::uint64_t>(StreamTag::kOracle));
  for (auto& p : noise.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  const std::size_t flat_size = codec_encode(flat, kQuality).size();
  const std::size_t noise_size = codec_encode(noise, kQuality).size();
  return {repeat && workers && from_disk && flat_size < noise_size,
          fmt("%zu images: repeat run identical %s, 1 vs 4 workers identical %s, reread corpus "
              "identical %s; constant image %zu bytes vs noise %zu bytes",
              kImages, repeat ? "yes" : "no", workers ? "yes" : "no", from_disk ? "yes" : "no",
              flat_size, noise_size)};
}

// --- 10 ------------------------------------------------------------------

struct RunRecord {
  std::vector<std::uint8_t> state;
  std::string metrics;
};

Outcome determinism_and_resume() {
  const DenoiserSpec spec = make_spec(2, 2, {16, 16}, 10);
  const NoiseSchedule s = schedule_for(spec.steps);
  const auto reward = points_reward();
  const fs::path dir = fs::temp_directory_path() / "ddpolab_acceptance_runs";
  fs::create_directories(dir);

  const ParamStore base = pretrained(spec, DataDomain::kPoints, 200);
  const bool pretrain_same =
      serialize_checkpoint(base) == serialize_checkpoint(pretrained(spec, DataDomain::kPoints, 200));

  auto config_for = [&](Algorithm a, int workers) {
    TrainConfig tc = TrainConfig::defaults(a);
    tc.steps = spec.steps;
    tc.adam.lr = 3e-4;
    tc.seed = 21;
    tc.workers = workers;
    if (a == Algorithm::kRwr || a == Algorithm::kRwrSparse) {
      tc.samples_per_iter = 512;
      tc.updates_per_iter = 20;
    }
    return tc;
  };
  // Runs `iterations` steps from `state`; optionally stops after `split`
  // steps, reloads the state from disk and continues with `resume_workers`.
  auto run = [&](Algorithm a, int workers, int iterations, int split, int resume_workers) {
    std::ostringstream metrics;
    write_metrics_header(metrics, 2);
    TrainState state = TrainState::fresh(base, 2);
    int done = 0;
    for (int leg = 0; done < iterations; ++leg) {
      const int w = leg == 0 ? workers : resume_workers;
      const int stop = leg == 0 && split > 0 ? split : iterations;
      Trainer trainer(config_for(a, w), spec, s, GuidanceConfig{}, *reward, ContextSampler{2, -1}, state);
      for (; done < stop; ++done) write_metrics_row(metrics, trainer.step());
      const fs::path p = dir / "state.ckpt";
      save_train_state(p, trainer.state());
      state = load_train_state(p);
    }
    const fs::path p = dir / "final.ckpt";
    save_train_state(p, state);
    return RunRecord{file_bytes(p), metrics.str()};
  };

  std::string detail = fmt("pretraining repeatable %s; ", pretrain_same ? "yes" : "no");
  bool ok = pretrain_same;
  for (Algorithm a : {Algorithm::kDdpoIs, Algorithm::kDdpoSf, Algorithm::kRwr, Algorithm::kRwrSparse}) {
    const RunRecord reference = run(a, 1, 3, 0, 1);
    const RunRecord again = run(a, 1, 3, 0, 1);
    const RunRecord parallel = run(a, 4, 3, 0, 4);
    const RunRecord resumed = run(a, 1, 3, 1, 4);
    auto same = [&](const RunRecord& r) {
      return r.state == reference.state && r.metrics == reference.metrics;
    };
    const bool a_ok = same(again) && same(parallel) && same(resumed);
    ok = ok && a_ok;
    detail += fmt("%s repeat %s, workers 1 vs 4 %s, resumed %s; ", to_string(a).c_str(),
                  same(again) ? "identical" : "DIFFERENT", same(parallel) ? "identical" : "DIFFERENT",
                  same(resumed) ? "identical" : "DIFFERENT");
  }
  fs::remove_all(dir);
  detail.resize(detail.size() - 2);
  return {ok, detail};
}

struct Criterion {
  int number;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {1, "gradient correctness", gradient_correctness},
      {2, "estimator unbiasedness", estimator_unbiasedness},
      {3, "estimator equivalence", estimator_equivalence},
      {4, "clipping contract", clipping_contract},
      {5, "algorithm ordering", algorithm_ordering},
      {6, "compressibility finetuning", compressibility_finetuning},
      {7, "weighting laws", rwr_weighting_laws},
      {8, "normalization law", normalization_law},
      {9, "codec determinism", codec_determinism},
      {10, "determinism and resume", determinism_and_resume},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.contains(c.number)) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures += o.passed ? 0 : 1;
    std::printf("%s %d %s: %s\n", o.passed ? "PASS" : "FAIL", c.number, c.name, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 4;
}
