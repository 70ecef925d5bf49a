// Copyright 2026 The ddpolab Authors
// SPDX-License-Identifier: Apache-2.0

#include "ddpolab/mlp.hpp"

#include <cmath>

#include "ddpolab/error.hpp"
#include "ddpolab/rng.hpp"

namespace ddpolab {

std::string to_string(Activation a) { return a == Activation::kSilu ? "silu" : "tanh"; }

Activation parse_activation(const std::string& s) {
  if (s == "silu") return Activation::kSilu;
  if (s == "tanh") return Activation::kTanh;
  throw ConfigError("unknown activation '" + s + "' (expected silu or tanh)");
}

std::size_t MlpArch::num_params() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i + 1 < layers.size(); ++i) n += layers[i] * layers[i + 1] + layers[i + 1];
  return n;
}

std::string weight_name(std::size_t layer) { return "layer" + std::to_string(layer) + ".weight"; }
std::string bias_name(std::size_t layer) { return "layer" + std::to_string(layer) + ".bias"; }

ParamStore init_mlp(const MlpArch& arch, std::uint64_t seed) {
  if (arch.layers.size() < 2) throw ShapeError("mlp needs at least an input and an output layer");
  ParamStore params;
  for (std::size_t l = 0; l + 1 < arch.layers.size(); ++l) {
    const std::size_t in = arch.layers[l], out = arch.layers[l + 1];
    Tensor w = Tensor::matrix(in, out);
    StreamRng rng(seed, derive_stream({static_cast<std::uint64_t>(StreamTag::kInit), l}));
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    for (double& v : w.values()) v = scale * rng.normal();
    params.add(weight_name(l), std::move(w));
    params.add(bias_name(l), Tensor({out}));
  }
  return params;
}

void validate_mlp(const ParamStore& params, const MlpArch& arch) {
  if (arch.layers.size() < 2) throw ShapeError("mlp needs at least an input and an output layer");
  const std::size_t expected = 2 * (arch.layers.size() - 1);
  if (params.num_segments() != expected) {
    throw ShapeError("mlp expects " + std::to_string(expected) + " segments, store has " +
                     std::to_string(params.num_segments()));
  }
  for (std::size_t l = 0; l + 1 < arch.layers.size(); ++l) {
    const Segment& w = params.segment(2 * l);
    const Segment& b = params.segment(2 * l + 1);
    const std::vector<std::size_t> wshape{arch.layers[l], arch.layers[l + 1]};
    const std::vector<std::size_t> bshape{arch.layers[l + 1]};
    if (w.name != weight_name(l) || w.value.shape() != wshape) {
      throw ShapeError("segment '" + w.name + "' has shape " + w.value.shape_string() +
                       ", expected '" + weight_name(l) + "' with " + Tensor(wshape).shape_string());
    }
    if (b.name != bias_name(l) || b.value.shape() != bshape) {
      throw ShapeError("segment '" + b.name + "' has shape " + b.value.shape_string() +
                       ", expected '" + bias_name(l) + "' with " + Tensor(bshape).shape_string());
    }
  }
}

namespace {

void check_input(std::size_t cols, const MlpArch& arch) {
  if (cols != arch.layers.front()) {
    throw ShapeError("mlp input has " + std::to_string(cols) + " columns, '" + weight_name(0) +
                     "' expects " + std::to_string(arch.layers.front()));
  }
}

}  // namespace

Tensor mlp_forward(const ParamStore& params, const Tensor& input, const MlpArch& arch) {
  validate_mlp(params, arch);
  check_input(input.cols(), arch);
  Tensor h = input;
  const std::size_t depth = arch.layers.size() - 1;
  for (std::size_t l = 0; l < depth; ++l) {
    h = kernels::add(kernels::matmul(h, params.segment(2 * l).value), params.segment(2 * l + 1).value);
    if (l + 1 < depth) {
      h = arch.activation == Activation::kSilu ? kernels::silu(h) : kernels::tanh(h);
    }
  }
  return h;
}

ad::Var mlp_forward(std::span<const ad::Var> leaves, ad::Var input, const MlpArch& arch) {
  const std::size_t depth = arch.layers.size() - 1;
  if (leaves.size() != 2 * depth) {
    throw ShapeError("mlp expects " + std::to_string(2 * depth) + " parameter leaves, got " +
                     std::to_string(leaves.size()));
  }
  check_input(input.value().cols(), arch);
  ad::Var h = input;
  for (std::size_t l = 0; l < depth; ++l) {
    h = ad::add(ad::matmul(h, leaves[2 * l]), leaves[2 * l + 1]);
    if (l + 1 < depth) h = arch.activation == Activation::kSilu ? ad::silu(h) : ad::tanh(h);
  }
  return h;
}

}  // namespace ddpolab
