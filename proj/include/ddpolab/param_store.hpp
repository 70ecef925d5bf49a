// Copyright 2026 The ddpolab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ddpolab/tensor.hpp"

namespace ddpolab {

struct Segment {
  std::string name;
  Tensor value;

  friend bool operator==(const Segment&, const Segment&) = default;
};

/// Ordered collection of named tensors with a flat scalar view.
///
/// The flat index runs through the segments in insertion order, each segment
/// row-major. Gradients use the same type so they line up with the
/// parameters they belong to.
class ParamStore {
 public:
  ParamStore() = default;

  /// Appends a segment. Names must be unique.
  void add(std::string name, Tensor value);

  std::size_t num_segments() const { return segments_.size(); }
  std::size_t total_size() const { return total_; }
  bool empty() const { return segments_.empty(); }

  const Segment& segment(std::size_t i) const { return segments_[i]; }
  Segment& segment(std::size_t i) { return segments_[i]; }
  const std::vector<Segment>& segments() const { return segments_; }

  std::optional<std::size_t> find(std::string_view name) const;
  const Tensor& get(std::string_view name) const;
  Tensor& get(std::string_view name);

  double flat(std::size_t i) const;
  double& flat(std::size_t i);

  std::vector<double> flatten() const;
  void assign_flat(std::span<const double> values);

  /// Same layout, all zeros.
  ParamStore zeros_like() const;
  bool same_layout(const ParamStore& other) const;

  /// this += alpha * other.
  void axpy(double alpha, const ParamStore& other);
  void scale(double alpha);
  double squared_norm() const;
  bool all_finite() const;

  friend bool operator==(const ParamStore&, const ParamStore&) = default;

 private:
  std::pair<std::size_t, std::size_t> locate(std::size_t i) const;

  std::vector<Segment> segments_;
  std::vector<std::size_t> offsets_;
  std::size_t total_ = 0;
};

}  // namespace ddpolab
