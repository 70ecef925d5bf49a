// Copyright 2026 The ddpolab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "ddpolab/config.hpp"

namespace ddpolab::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;
inline constexpr int kExitCheckFailed = 4;

struct PretrainArgs {
  std::filesystem::path config;
  ConfigOverrides overrides;
  std::optional<std::filesystem::path> out;
};

struct FinetuneArgs {
  std::filesystem::path config;
  ConfigOverrides overrides;
  std::optional<std::filesystem::path> resume;
};

struct SampleArgs {
  std::filesystem::path config;
  ConfigOverrides overrides;
  std::optional<std::filesystem::path> checkpoint;
  int context = -1;
  std::size_t n = 100;
  std::filesystem::path out = "samples";
};

struct GradcheckArgs {
  std::string scope;
  int seeds = 100;
  int workers = 1;
};

struct CompareArgs {
  std::filesystem::path config;
  ConfigOverrides overrides;
  std::size_t budget = 50000;
  std::size_t eval_samples = 2000;
  std::optional<std::filesystem::path> out;
};

int cmd_pretrain(const PretrainArgs& args);
int cmd_finetune(const FinetuneArgs& args);
int cmd_sample(const SampleArgs& args);
int cmd_gradcheck(const GradcheckArgs& args);
int cmd_compare(const CompareArgs& args);

std::string version();

}  // namespace ddpolab::cli
