// Copyright 2026 The ddpolab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ddpolab/algorithms.hpp"
#include "ddpolab/data.hpp"
#include "ddpolab/diffusion.hpp"
#include "ddpolab/rewards.hpp"

namespace ddpolab {

/// Everything one run needs, resolved: every key has a value after parsing.
///
/// Text form is flat `key = value` lines under `[section]` headers; `#` and
/// `;` start comments. Lists are comma-separated.
struct RunConfig {
  // [run]
  std::uint64_t seed = 0;
  int workers = 1;
  std::string out_dir = "runs";
  std::string base_checkpoint = "base.ckpt";

  // [model]
  std::vector<std::size_t> hidden{32, 32};
  Activation activation = Activation::kSilu;

  // [data]
  DataDomain domain = DataDomain::kPoints;
  std::size_t num_contexts = 2;

  // [diffusion]
  int steps = 50;
  double beta_min = 0.0;
  double beta_max = 0.0;
  GuidanceConfig guidance;

  // [pretrain]
  PretrainConfig pretrain;

  // [train]
  TrainConfig train;

  // [reward]
  RewardSpec reward;

  DenoiserSpec denoiser() const;
  NoiseSchedule schedule() const;
  /// Training settings with the run-level seed, worker count and step count applied.
  TrainConfig train_config() const;
  PretrainConfig pretrain_config() const;
  void validate() const;
};

/// `section.key` -> raw value; applied on top of the file before defaults
/// are resolved, so an overridden algorithm picks up its own defaults.
using ConfigOverrides = std::map<std::string, std::string>;

/// Throws ConfigError listing every unknown or malformed key.
RunConfig parse_config(const std::string& text, const ConfigOverrides& overrides = {});
RunConfig load_config(const std::filesystem::path& path, const ConfigOverrides& overrides = {});

/// Canonical text with every key written out; parse_config(emit_config(c)) == c.
std::string emit_config(const RunConfig& config);

bool operator==(const RunConfig& a, const RunConfig& b);

}  // namespace ddpolab
