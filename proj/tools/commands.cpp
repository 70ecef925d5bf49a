// Copyright 2026 The ddpolab Authors
// SPDX-License-Identifier: Apache-2.0

#include "commands.hpp"

#include <chrono>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "ddpolab/algorithms.hpp"
#include "ddpolab/checkpoint.hpp"
#include "ddpolab/checks.hpp"
#include "ddpolab/codec.hpp"
#include "ddpolab/error.hpp"
#include "ddpolab/mdp.hpp"

#ifndef DDPOLAB_GIT_DESCRIBE
#define DDPOLAB_GIT_DESCRIBE "unknown"
#endif

namespace ddpolab::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::string version() { return DDPOLAB_GIT_DESCRIBE; }

namespace {

std::string hex(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return buf;
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::trunc) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::out | mode);
  if (!out) throw ConfigError("cannot open " + path.string() + " for writing");
  return out;
}

// Write-then-rename so an interrupted run never leaves a torn state file.
void save_state_atomic(const fs::path& path, const TrainState& state) {
  fs::path tmp = path;
  tmp += ".tmp";
  save_train_state(tmp, state);
  fs::rename(tmp, path);
}

void write_manifest(const fs::path& path, const std::string& command, const RunConfig& config,
                    std::uint64_t start_hash, std::uint64_t end_hash, const fs::path& metrics,
                    const json& outputs) {
  json m;
  m["command"] = command;
  m["version"] = version();
  m["config"] = emit_config(config);
  m["seed"] = config.seed;
  m["start_checkpoint_hash"] = hex(start_hash);
  m["end_checkpoint_hash"] = hex(end_hash);
  m["metrics"] = metrics.string();
  m["outputs"] = outputs;
  m["finished_at"] = utc_now();
  open_out(path) << m.dump(2) << '\n';
}

ParamStore load_base(const RunConfig& config, const fs::path& path) {
  ParamStore params = load_checkpoint(path);
  try {
    validate_mlp(params, config.denoiser().arch());
  } catch (const ShapeError& e) {
    throw ConfigError(path.string() + " does not match the configured model: " + e.what());
  }
  return params;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

int cmd_pretrain(const PretrainArgs& args) {
  const RunConfig config = load_config(args.config, args.overrides);
  const fs::path out_dir = config.out_dir;
  const fs::path ckpt = args.out.value_or(fs::path(config.base_checkpoint));
  const fs::path loss_csv = out_dir / "pretrain_loss.csv";

  const DenoiserSpec spec = config.denoiser();
  const ParamStore init = init_denoiser(spec, config.seed);
  std::ofstream losses = open_out(loss_csv);
  losses << "step,loss\n";
  char buf[64];
  const ParamStore params = pretrain_ddpm(
      init, spec, config.schedule(), config.guidance, config.domain, config.pretrain_config(),
      [&](std::size_t step, double loss) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g\n", step, loss);
        losses << buf;
      });
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
  save_checkpoint(ckpt, params);
  write_manifest(out_dir / "pretrain_manifest.json", "pretrain", config, checkpoint_hash(init),
                 checkpoint_hash(params), loss_csv, {{"checkpoint", ckpt.string()}});
  std::cout << "wrote " << ckpt.string() << " (" << params.total_size() << " parameters)\n";
  return kExitOk;
}

int cmd_finetune(const FinetuneArgs& args) {
  const RunConfig config = load_config(args.config, args.overrides);
  const fs::path out_dir = config.out_dir;
  const fs::path metrics_path = out_dir / "metrics.csv";
  const fs::path state_path = out_dir / "state.ckpt";
  const fs::path final_path = out_dir / "final.ckpt";

  const ParamStore base = load_base(config, config.base_checkpoint);
  TrainState state = args.resume ? load_train_state(*args.resume)
                                 : TrainState::fresh(base, config.num_contexts);
  const auto reward = make_reward(config.reward);
  const TrainConfig tc = config.train_config();
  Trainer trainer(tc, config.denoiser(), config.schedule(), config.guidance, *reward,
                  ContextSampler{config.num_contexts, -1}, std::move(state));

  std::ofstream metrics = open_out(metrics_path, args.resume ? std::ios::app : std::ios::trunc);
  if (!args.resume) write_metrics_header(metrics, config.num_contexts);
  int status = kExitOk;
  try {
    while (trainer.state().iteration < tc.iterations) {
      const IterationMetrics m = trainer.step();
      write_metrics_row(metrics, m);
      metrics.flush();
      save_state_atomic(state_path, trainer.state());
      std::cout << "iteration " << m.iteration << " queries " << m.reward_queries
                << " mean_reward " << m.mean_reward << '\n';
    }
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << '\n';
    status = kExitNumerical;
  }
  save_checkpoint(final_path, trainer.state().params);
  write_manifest(out_dir / "manifest.json", "finetune", config, checkpoint_hash(base),
                 checkpoint_hash(trainer.state().params), metrics_path,
                 {{"checkpoint", final_path.string()},
                  {"state", state_path.string()},
                  {"resumed_from", args.resume ? args.resume->string() : ""},
                  {"iterations", trainer.state().iteration},
                  {"reward_queries", trainer.state().reward_queries}});
  return status;
}

int cmd_sample(const SampleArgs& args) {
  const RunConfig config = load_config(args.config, args.overrides);
  if (args.context >= static_cast<int>(config.num_contexts) || args.context < -1) {
    throw DomainError("context " + std::to_string(args.context) + " out of range 0.." +
                      std::to_string(config.num_contexts - 1));
  }
  const ParamStore params = load_base(config, args.checkpoint.value_or(config.base_checkpoint));
  const auto reward = make_reward(config.reward);
  const DenoiserSpec spec = config.denoiser();

  RolloutBatch batch;
  if (args.n > 0) {
    const RolloutOptions opt{config.seed, static_cast<std::uint64_t>(StreamTag::kSample), 0,
                             config.workers, false};
    batch = collect_trajectories(params, spec, config.schedule(), config.guidance,
                                 ContextSampler{config.num_contexts, args.context}, args.n, opt);
    score_batch(batch, *reward, config.workers);
  }

  if (config.domain == DataDomain::kPoints) {
    std::ofstream out = open_out(args.out);
    out << "index,context,x,y,reward\n";
    char buf[128];
    for (const auto& traj : batch.trajectories) {
      std::snprintf(buf, sizeof buf, "%" PRIu64 ",%d,%.17g,%.17g,%.17g\n", traj.index, traj.context,
                    traj.x0()[0], traj.x0()[1], *traj.reward);
      out << buf;
    }
  } else {
    std::vector<CodecImage> images;
    for (const auto& traj : batch.trajectories) images.push_back(render_to_image(traj.x0()));
    if (args.out.has_parent_path()) fs::create_directories(args.out.parent_path());
    write_image_corpus(args.out, images);
  }

  std::vector<std::vector<double>> per_context(config.num_contexts);
  for (const auto& traj : batch.trajectories) {
    per_context[static_cast<std::size_t>(traj.context)].push_back(*traj.reward);
  }
  std::cout << "context,count,mean_reward\n";
  for (std::size_t c = 0; c < config.num_contexts; ++c) {
    if (per_context[c].empty()) continue;
    std::printf("%zu,%zu,%.17g\n", c, per_context[c].size(), mean_of(per_context[c]));
  }
  if (batch.invalid_count > 0) {
    std::cerr << "warning: " << batch.invalid_count << " rollouts were non-finite and dropped\n";
  }
  return kExitOk;
}

int cmd_gradcheck(const GradcheckArgs& args) {
  std::vector<CheckResult> results;
  if (args.scope == "autodiff") {
    results = autodiff_checks(args.seeds);
  } else if (args.scope == "ddpm") {
    results = ddpm_checks(args.seeds);
  } else if (args.scope == "estimator") {
    EstimatorCheckOptions o;
    o.workers = args.workers;
    results.push_back(estimator_check(o));
  } else {
    throw ConfigError("unknown gradcheck scope '" + args.scope +
                      "' (expected autodiff, ddpm or estimator)");
  }
  for (const auto& r : results) {
    std::printf("%s %s: %.6g (%s %.6g)\n", r.passed() ? "PASS" : "FAIL", r.name.c_str(), r.value,
                r.upper_bound ? "max" : "min", r.threshold);
  }
  return all_passed(results) ? kExitOk : kExitCheckFailed;
}

int cmd_compare(const CompareArgs& args) {
  const RunConfig base_config = load_config(args.config, args.overrides);
  const fs::path out = args.out.value_or(fs::path(base_config.out_dir) / "compare.csv");
  const ParamStore base = load_base(base_config, base_config.base_checkpoint);
  std::ofstream csv = open_out(out);
  csv << "series,seed,iteration,reward_queries,mean_reward\n";
  char buf[160];
  int status = kExitOk;
  for (const char* name : {"ddpo_is", "ddpo_sf", "rwr", "rwr_sparse"}) {
    ConfigOverrides overrides = args.overrides;
    overrides["train.algorithm"] = name;
    const RunConfig config = load_config(args.config, overrides);
    const auto reward = make_reward(config.reward);
    Trainer trainer(config.train_config(), config.denoiser(), config.schedule(), config.guidance,
                    *reward, ContextSampler{config.num_contexts, -1},
                    TrainState::fresh(base, config.num_contexts));
    try {
      while (trainer.state().reward_queries < args.budget) {
        const IterationMetrics m = trainer.step();
        std::snprintf(buf, sizeof buf, "%s,%" PRIu64 ",%" PRIu64 ",%" PRIu64 ",%.17g\n", name,
                      config.seed, m.iteration, m.reward_queries, m.mean_reward);
        csv << buf;
      }
    } catch (const NumericalError& e) {
      std::cerr << name << ": " << e.what() << '\n';
      status = kExitNumerical;
      continue;
    }
    GuidanceConfig g = config.guidance;
    RolloutBatch eval = collect_trajectories(
        trainer.state().params, config.denoiser(), config.schedule(), g,
        ContextSampler{config.num_contexts, -1}, args.eval_samples,
        RolloutOptions{config.seed, static_cast<std::uint64_t>(StreamTag::kSample), 0,
                       config.workers, false});
    score_batch(eval, *reward, config.workers);
    std::vector<double> rewards;
    for (const auto& traj : eval.trajectories) rewards.push_back(*traj.reward);
    std::printf("%s final mean reward %.6g after %" PRIu64 " queries\n", name, mean_of(rewards),
                trainer.state().reward_queries);
  }
  std::cout << "wrote " << out.string() << '\n';
  return status;
}

}  // namespace ddpolab::cli
