// Copyright 2026 The ddpolab Authors
// SPDX-License-Identifier: Apache-2.0

#include "ddpolab/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ddpolab/error.hpp"

namespace ddpolab {

std::string to_string(DataDomain d) { return d == DataDomain::kPoints ? "points" : "images"; }

DataDomain parse_domain(const std::string& s) {
  if (s == "points") return DataDomain::kPoints;
  if (s == "images") return DataDomain::kImages;
  throw ConfigError("unknown data domain '" + s + "' (expected points or images)");
}

std::size_t domain_dim(DataDomain d) {
  return d == DataDomain::kPoints ? 2 : kImageSide * kImageSide;
}

namespace {

constexpr double kPointRadius = 1.0;
constexpr double kPointSpread = 0.35;
constexpr double kPointStd = 0.12;

void sample_point(std::size_t num_contexts, int context, StreamRng& rng, std::span<double> out) {
  const double phi = 2.0 * std::numbers::pi * context / static_cast<double>(num_contexts);
  const double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
  const double cx = kPointRadius * std::cos(phi) - side * kPointSpread * std::sin(phi);
  const double cy = kPointRadius * std::sin(phi) + side * kPointSpread * std::cos(phi);
  out[0] = cx + kPointStd * rng.normal();
  out[1] = cy + kPointStd * rng.normal();
}

void sample_image(int context, StreamRng& rng, std::span<double> out) {
  const int pattern = context % 4;
  const int phase = static_cast<int>(rng.below(4));
  const double amplitude = 0.5 + 0.4 * rng.uniform();
  const int n = static_cast<int>(kImageSide);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      double v = 0.0;
      switch (pattern) {
        case 0: v = ((y + phase) / 2) % 2 == 0 ? 1.0 : -1.0; break;
        case 1: v = ((x + phase) / 2) % 2 == 0 ? 1.0 : -1.0; break;
        case 2: v = (((x + phase) / 2 + (y + phase) / 2) % 2) == 0 ? 1.0 : -1.0; break;
        default: v = 2.0 * static_cast<double>((x + y + phase) % n) / (n - 1) - 1.0; break;
      }
      const double noisy = amplitude * v + 0.05 * rng.normal();
      out[static_cast<std::size_t>(y * n + x)] = std::clamp(noisy, -1.0, 1.0);
    }
  }
}

}  // namespace

void sample_example(DataDomain domain, std::size_t num_contexts, int context, StreamRng& rng,
                    std::span<double> out) {
  if (context < 0 || static_cast<std::size_t>(context) >= num_contexts) {
    throw DomainError("context id " + std::to_string(context) + " out of range");
  }
  if (out.size() != domain_dim(domain)) throw ShapeError("sample_example: wrong output length");
  if (domain == DataDomain::kPoints) {
    sample_point(num_contexts, context, rng, out);
  } else {
    sample_image(context, rng, out);
  }
}

DdpmBatch sample_data_batch(DataDomain domain, std::size_t num_contexts, std::size_t n,
                            std::uint64_t seed, std::uint64_t step) {
  const std::size_t d = domain_dim(domain);
  DdpmBatch batch{Tensor::matrix(n, d), std::vector<int>(n), {}};
  for (std::size_t r = 0; r < n; ++r) {
    StreamRng rng(seed, derive_stream({static_cast<std::uint64_t>(StreamTag::kData), step, r}));
    const int c = static_cast<int>(rng.below(num_contexts));
    batch.contexts[r] = c;
    sample_example(domain, num_contexts, c, rng, batch.x0.row_span(r));
  }
  return batch;
}

}  // namespace ddpolab
