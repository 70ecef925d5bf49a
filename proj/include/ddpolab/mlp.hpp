// Copyright 2026 The ddpolab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ddpolab/autodiff.hpp"
#include "ddpolab/param_store.hpp"
#include "ddpolab/tensor.hpp"

namespace ddpolab {

enum class Activation { kSilu, kTanh };

std::string to_string(Activation a);
Activation parse_activation(const std::string& s);

/// Fully connected network: layers[0] inputs, layers.back() outputs, the
/// activation between every pair of hidden layers and none on the output.
struct MlpArch {
  std::vector<std::size_t> layers;
  Activation activation = Activation::kSilu;

  std::size_t num_params() const;
};

std::string weight_name(std::size_t layer);
std::string bias_name(std::size_t layer);

/// Weights ~ N(0, 1/fan_in), biases zero, drawn from the counter RNG.
ParamStore init_mlp(const MlpArch& arch, std::uint64_t seed);

/// Throws ShapeError naming the first segment that disagrees with `arch`.
void validate_mlp(const ParamStore& params, const MlpArch& arch);

/// Untraced forward pass; input is rows x layers[0].
Tensor mlp_forward(const ParamStore& params, const Tensor& input, const MlpArch& arch);

/// Traced forward pass over the leaves returned by Tape::bind.
ad::Var mlp_forward(std::span<const ad::Var> leaves, ad::Var input, const MlpArch& arch);

}  // namespace ddpolab
