// Copyright 2026 The ddpolab Authors
// SPDX-License-Identifier: Apache-2.0

#include "ddpolab/rewards.hpp"

#include <algorithm>

#include "ddpolab/error.hpp"

namespace ddpolab {

std::string to_string(RewardKind k) {
  switch (k) {
    case RewardKind::kCompress: return "compress";
    case RewardKind::kIncompress: return "incompress";
    case RewardKind::kTargetDistance: return "target_distance";
    case RewardKind::kRegionIndicator: return "region_indicator";
  }
  return "?";
}

RewardKind parse_reward_kind(const std::string& s) {
  if (s == "compress") return RewardKind::kCompress;
  if (s == "incompress") return RewardKind::kIncompress;
  if (s == "target_distance") return RewardKind::kTargetDistance;
  if (s == "region_indicator") return RewardKind::kRegionIndicator;
  throw ConfigError("unknown reward '" + s +
                    "' (expected compress, incompress, target_distance or region_indicator)");
}

void RewardFunction::gradient(std::span<const double>, int, std::span<double>) const {
  throw DomainError(name() + " reward has no gradient");
}

double compressibility_reward(std::span<const double> x0, int quality, std::size_t width,
                              std::size_t height) {
  const auto bytes = codec_encode(render_to_image(x0, width, height), quality);
  return -static_cast<double>(bytes.size()) / 1000.0;
}

double incompressibility_reward(std::span<const double> x0, int quality, std::size_t width,
                                std::size_t height) {
  return -compressibility_reward(x0, quality, width, height);
}

double target_distance_reward(std::span<const double> x0, std::span<const double> target) {
  if (x0.size() != target.size()) throw ShapeError("target_distance: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    const double d = x0[i] - target[i];
    acc += d * d;
  }
  return -acc;
}

double region_indicator_reward(std::span<const double> x0, std::span<const double> lo,
                               std::span<const double> hi) {
  if (x0.size() != lo.size() || x0.size() != hi.size()) {
    throw ShapeError("region_indicator: length mismatch");
  }
  for (std::size_t i = 0; i < x0.size(); ++i) {
    if (!(x0[i] >= lo[i] && x0[i] <= hi[i])) return 0.0;
  }
  return 1.0;
}

namespace {

void check_context(int context, std::size_t num_contexts) {
  if (context < 0 || static_cast<std::size_t>(context) >= num_contexts) {
    throw DomainError("reward: context " + std::to_string(context) + " out of range");
  }
}

// Per-context slices of a flat table that is either shared or per context.
class ContextTable {
 public:
  ContextTable(std::vector<double> values, std::size_t width, std::size_t contexts,
               const std::string& what)
      : values_(std::move(values)), width_(width), contexts_(contexts) {
    if (values_.size() != width_ && values_.size() != width_ * contexts_) {
      throw ConfigError(what + " needs " + std::to_string(width_) + " or " +
                        std::to_string(width_ * contexts_) + " values, got " +
                        std::to_string(values_.size()));
    }
  }
  std::span<const double> at(int context) const {
    check_context(context, contexts_);
    const std::size_t offset = values_.size() == width_ ? 0 : width_ * static_cast<std::size_t>(context);
    return {values_.data() + offset, width_};
  }

 private:
  std::vector<double> values_;
  std::size_t width_;
  std::size_t contexts_;
};

class CodecReward final : public RewardFunction {
 public:
  CodecReward(const RewardSpec& spec, bool maximize_size)
      : spec_(spec), maximize_size_(maximize_size) {
    quant_table(spec.quality);
    CodecImage{spec.image_width, spec.image_height,
               std::vector<std::uint8_t>(spec.image_width * spec.image_height)}
        .validate();
    if (spec.data_dim != spec.image_width * spec.image_height) {
      throw ConfigError(name() + " reward needs data_dim " +
                        std::to_string(spec.image_width * spec.image_height) + ", got " +
                        std::to_string(spec.data_dim));
    }
  }
  double operator()(std::span<const double> x0, int context) const override {
    check_context(context, spec_.num_contexts);
    const double r = compressibility_reward(x0, spec_.quality, spec_.image_width, spec_.image_height);
    return maximize_size_ ? -r : r;
  }
  std::string name() const override { return maximize_size_ ? "incompress" : "compress"; }

 private:
  RewardSpec spec_;
  bool maximize_size_;
};

class TargetDistanceReward final : public RewardFunction {
 public:
  explicit TargetDistanceReward(const RewardSpec& spec)
      : table_(spec.targets, spec.data_dim, spec.num_contexts, "target_distance targets") {}
  double operator()(std::span<const double> x0, int context) const override {
    return target_distance_reward(x0, table_.at(context));
  }
  bool has_gradient() const override { return true; }
  void gradient(std::span<const double> x0, int context, std::span<double> out) const override {
    auto target = table_.at(context);
    for (std::size_t i = 0; i < x0.size(); ++i) out[i] = -2.0 * (x0[i] - target[i]);
  }
  std::string name() const override { return "target_distance"; }

 private:
  ContextTable table_;
};

class RegionIndicatorReward final : public RewardFunction {
 public:
  explicit RegionIndicatorReward(const RewardSpec& spec)
      : table_(spec.bounds, 2 * spec.data_dim, spec.num_contexts, "region_indicator bounds"),
        dim_(spec.data_dim) {
    for (std::size_t c = 0; c < spec.num_contexts; ++c) {
      auto b = table_.at(static_cast<int>(c));
      for (std::size_t i = 0; i < dim_; ++i) {
        if (!(b[i] <= b[dim_ + i])) throw ConfigError("region_indicator bounds have lo > hi");
      }
    }
  }
  double operator()(std::span<const double> x0, int context) const override {
    auto b = table_.at(context);
    return region_indicator_reward(x0, b.subspan(0, dim_), b.subspan(dim_, dim_));
  }
  // Piecewise constant: zero almost everywhere.
  bool has_gradient() const override { return true; }
  void gradient(std::span<const double>, int, std::span<double> out) const override {
    std::fill(out.begin(), out.end(), 0.0);
  }
  std::string name() const override { return "region_indicator"; }

 private:
  ContextTable table_;
  std::size_t dim_;
};

}  // namespace

std::unique_ptr<RewardFunction> make_reward(const RewardSpec& spec) {
  switch (spec.kind) {
    case RewardKind::kCompress: return std::make_unique<CodecReward>(spec, false);
    case RewardKind::kIncompress: return std::make_unique<CodecReward>(spec, true);
    case RewardKind::kTargetDistance: return std::make_unique<TargetDistanceReward>(spec);
    case RewardKind::kRegionIndicator: return std::make_unique<RegionIndicatorReward>(spec);
  }
  throw ConfigError("unknown reward kind");
}

}  // namespace ddpolab
