// Copyright 2026 The ddpolab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ddpolab/codec.hpp"

namespace ddpolab {

enum class RewardKind { kCompress, kIncompress, kTargetDistance, kRegionIndicator };

std::string to_string(RewardKind k);
RewardKind parse_reward_kind(const std::string& s);

struct RewardSpec {
  RewardKind kind = RewardKind::kTargetDistance;
  std::size_t num_contexts = 1;
  std::size_t data_dim = 2;
  /// target_distance: num_contexts * data_dim values, or data_dim values shared by all contexts.
  std::vector<double> targets;
  /// region_indicator: per context, data_dim lower bounds then data_dim upper
  /// bounds, or one such pair shared by all contexts.
  std::vector<double> bounds;
  int quality = 95;
  std::size_t image_width = 8;
  std::size_t image_height = 8;
};

/// r(x0, c). Implementations are pure: no state survives a call.
class RewardFunction {
 public:
  virtual ~RewardFunction() = default;

  virtual double operator()(std::span<const double> x0, int context) const = 0;

  /// Whether dr/dx0 is available (used on the final deterministic step).
  virtual bool has_gradient() const { return false; }
  virtual void gradient(std::span<const double> x0, int context, std::span<double> out) const;

  virtual std::string name() const = 0;
};

/// Throws ConfigError when targets/bounds do not cover every context.
std::unique_ptr<RewardFunction> make_reward(const RewardSpec& spec);

/// -(encoded bytes)/1000 of the rendered image.
double compressibility_reward(std::span<const double> x0, int quality, std::size_t width = 8,
                              std::size_t height = 8);
/// +(encoded bytes)/1000.
double incompressibility_reward(std::span<const double> x0, int quality, std::size_t width = 8,
                                std::size_t height = 8);
/// -||x0 - target||^2.
double target_distance_reward(std::span<const double> x0, std::span<const double> target);
/// 1 if lo <= x0 <= hi coordinatewise (closed box), else 0.
double region_indicator_reward(std::span<const double> x0, std::span<const double> lo,
                               std::span<const double> hi);

}  // namespace ddpolab
