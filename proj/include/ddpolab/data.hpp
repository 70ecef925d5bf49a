// Copyright 2026 The ddpolab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "ddpolab/diffusion.hpp"
#include "ddpolab/rng.hpp"

namespace ddpolab {

/// Synthetic training distributions.
///
/// points: 2-D, context k is a two-component Gaussian mixture placed on the
///         unit circle at angle 2*pi*k/K.
/// images: 8x8 grayscale in [-1, 1], flattened row-major; context k cycles
///         through horizontal bars, vertical bars, checkerboard and a
///         diagonal ramp, with random phase, amplitude and pixel noise.
enum class DataDomain { kPoints, kImages };

std::string to_string(DataDomain d);
DataDomain parse_domain(const std::string& s);
std::size_t domain_dim(DataDomain d);

inline constexpr std::size_t kImageSide = 8;

/// Draws one example of `context` into `out` (length domain_dim).
void sample_example(DataDomain domain, std::size_t num_contexts, int context, StreamRng& rng,
                    std::span<double> out);

/// n examples with uniformly drawn contexts; row r uses its own stream keyed
/// by (seed, step, r).
DdpmBatch sample_data_batch(DataDomain domain, std::size_t num_contexts, std::size_t n,
                            std::uint64_t seed, std::uint64_t step);

}  // namespace ddpolab
