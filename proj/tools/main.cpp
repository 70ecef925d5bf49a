// Copyright 2026 The ddpolab Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"
#include "ddpolab/error.hpp"

using namespace ddpolab;
using namespace ddpolab::cli;

namespace {

// Precedence: command-line flag, then DDPOLAB_SEED, then the config file.
void apply_seed(ConfigOverrides& overrides, const std::optional<std::string>& flag) {
  if (flag) {
    overrides["run.seed"] = *flag;
  } else if (const char* env = std::getenv("DDPOLAB_SEED")) {
    overrides["run.seed"] = env;
  }
}

void add_common(CLI::App* cmd, std::filesystem::path& config, std::optional<std::string>& seed,
                std::optional<std::string>& workers, std::optional<std::string>& out_dir) {
  cmd->add_option("-c,--config", config, "Run configuration file")->required();
  cmd->add_option("--seed", seed, "Override run.seed");
  cmd->add_option("--workers", workers, "Override run.workers");
  cmd->add_option("--out-dir", out_dir, "Override run.out_dir");
}

ConfigOverrides collect(const std::optional<std::string>& seed,
                        const std::optional<std::string>& workers,
                        const std::optional<std::string>& out_dir) {
  ConfigOverrides o;
  apply_seed(o, seed);
  if (workers) o["run.workers"] = *workers;
  if (out_dir) o["run.out_dir"] = *out_dir;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Policy-gradient finetuning of toy diffusion models"};
  app.set_version_flag("--version", version());
  app.require_subcommand(1);

  std::optional<std::string> seed, workers, out_dir;

  PretrainArgs pre;
  auto* pre_cmd = app.add_subcommand("pretrain", "Train the base denoiser on synthetic data");
  add_common(pre_cmd, pre.config, seed, workers, out_dir);
  pre_cmd->add_option("-o,--out", pre.out, "Checkpoint path (default run.base_checkpoint)");

  FinetuneArgs fine;
  std::optional<std::string> algorithm, reward, iters, base;
  auto* fine_cmd = app.add_subcommand("finetune", "Reinforcement-learning finetuning");
  add_common(fine_cmd, fine.config, seed, workers, out_dir);
  fine_cmd->add_option("--algorithm", algorithm, "rwr, rwr_sparse, ddpo_sf or ddpo_is");
  fine_cmd->add_option("--reward", reward, "compress, incompress, target_distance or region_indicator");
  fine_cmd->add_option("--iters", iters, "Override train.iterations");
  fine_cmd->add_option("--base", base, "Override run.base_checkpoint");
  fine_cmd->add_option("--resume", fine.resume, "Training state file to continue from");

  SampleArgs sample;
  auto* sample_cmd = app.add_subcommand("sample", "Draw samples and report mean reward per context");
  add_common(sample_cmd, sample.config, seed, workers, out_dir);
  sample_cmd->add_option("--checkpoint", sample.checkpoint, "Parameters (default run.base_checkpoint)");
  sample_cmd->add_option("--context", sample.context, "Fixed context id (default: sampled)");
  sample_cmd->add_option("-n", sample.n, "Number of samples");
  sample_cmd->add_option("-o,--out", sample.out, "CSV (points) or image corpus (images)");

  GradcheckArgs grad;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Run a gradient oracle suite");
  grad_cmd->add_option("--scope", grad.scope, "autodiff, ddpm or estimator")->required();
  grad_cmd->add_option("--seeds", grad.seeds, "Models per suite");
  grad_cmd->add_option("--workers", grad.workers, "Worker threads");

  CompareArgs cmp;
  auto* cmp_cmd = app.add_subcommand("compare", "Four-algorithm sweep at an equal query budget");
  add_common(cmp_cmd, cmp.config, seed, workers, out_dir);
  cmp_cmd->add_option("--budget", cmp.budget, "Reward queries per algorithm");
  cmp_cmd->add_option("--eval-samples", cmp.eval_samples, "Samples for the final evaluation");
  cmp_cmd->add_option("-o,--out", cmp.out, "Tidy CSV path (default out_dir/compare.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    const ConfigOverrides common = collect(seed, workers, out_dir);
    if (*pre_cmd) {
      pre.overrides = common;
      return cmd_pretrain(pre);
    }
    if (*fine_cmd) {
      fine.overrides = common;
      if (algorithm) fine.overrides["train.algorithm"] = *algorithm;
      if (reward) fine.overrides["reward.kind"] = *reward;
      if (iters) fine.overrides["train.iterations"] = *iters;
      if (base) fine.overrides["run.base_checkpoint"] = *base;
      return cmd_finetune(fine);
    }
    if (*sample_cmd) {
      sample.overrides = common;
      return cmd_sample(sample);
    }
    if (*grad_cmd) return cmd_gradcheck(grad);
    cmp.overrides = common;
    return cmd_compare(cmp);
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  }
}
