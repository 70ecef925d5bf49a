// Copyright 2026 The ddpolab Authors
// SPDX-License-Identifier: Apache-2.0

#include "ddpolab/param_store.hpp"

#include <algorithm>
#include <cmath>

#include "ddpolab/error.hpp"

namespace ddpolab {

void ParamStore::add(std::string name, Tensor value) {
  if (find(name)) throw ShapeError("duplicate parameter segment '" + name + "'");
  offsets_.push_back(total_);
  total_ += value.size();
  segments_.push_back({std::move(name), std::move(value)});
}

std::optional<std::size_t> ParamStore::find(std::string_view name) const {
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    if (segments_[i].name == name) return i;
  }
  return std::nullopt;
}

const Tensor& ParamStore::get(std::string_view name) const {
  auto i = find(name);
  if (!i) throw ShapeError("missing parameter segment '" + std::string(name) + "'");
  return segments_[*i].value;
}

Tensor& ParamStore::get(std::string_view name) {
  return const_cast<Tensor&>(std::as_const(*this).get(name));
}

std::pair<std::size_t, std::size_t> ParamStore::locate(std::size_t i) const {
  if (i >= total_) throw ShapeError("flat parameter index " + std::to_string(i) + " out of range");
  auto it = std::upper_bound(offsets_.begin(), offsets_.end(), i);
  const std::size_t seg = static_cast<std::size_t>(it - offsets_.begin()) - 1;
  return {seg, i - offsets_[seg]};
}

double ParamStore::flat(std::size_t i) const {
  auto [seg, off] = locate(i);
  return segments_[seg].value[off];
}

double& ParamStore::flat(std::size_t i) {
  auto [seg, off] = locate(i);
  return segments_[seg].value[off];
}

std::vector<double> ParamStore::flatten() const {
  std::vector<double> out;
  out.reserve(total_);
  for (const auto& s : segments_) out.insert(out.end(), s.value.values().begin(), s.value.values().end());
  return out;
}

void ParamStore::assign_flat(std::span<const double> values) {
  if (values.size() != total_) {
    throw ShapeError("assign_flat: got " + std::to_string(values.size()) + " values for " +
                     std::to_string(total_) + " parameters");
  }
  std::size_t k = 0;
  for (auto& s : segments_) {
    for (double& v : s.value.values()) v = values[k++];
  }
}

ParamStore ParamStore::zeros_like() const {
  ParamStore out;
  for (const auto& s : segments_) out.add(s.name, Tensor(s.value.shape()));
  return out;
}

bool ParamStore::same_layout(const ParamStore& other) const {
  if (segments_.size() != other.segments_.size()) return false;
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    if (segments_[i].name != other.segments_[i].name ||
        segments_[i].value.shape() != other.segments_[i].value.shape()) {
      return false;
    }
  }
  return true;
}

void ParamStore::axpy(double alpha, const ParamStore& other) {
  if (!same_layout(other)) throw ShapeError("axpy: parameter layouts differ");
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    auto dst = segments_[i].value.values();
    auto src = other.segments_[i].value.values();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += alpha * src[k];
  }
}

void ParamStore::scale(double alpha) {
  for (auto& s : segments_) {
    for (double& v : s.value.values()) v *= alpha;
  }
}

double ParamStore::squared_norm() const {
  double acc = 0.0;
  for (const auto& s : segments_) {
    for (double v : s.value.values()) acc += v * v;
  }
  return acc;
}

bool ParamStore::all_finite() const {
  return std::all_of(segments_.begin(), segments_.end(),
                     [](const Segment& s) { return s.value.all_finite(); });
}

}  // namespace ddpolab
