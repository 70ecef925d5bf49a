// Copyright 2026 The ddpolab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <span>

namespace ddpolab {

using PhiloxCounter = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

/// Philox4x32 with 10 rounds (Salmon et al., SC'11).
PhiloxCounter philox4x32_10(PhiloxCounter counter, PhiloxKey key);

/// Folds a list of integers into one 64-bit stream id (splitmix64 chain).
std::uint64_t derive_stream(std::initializer_list<std::uint64_t> parts);

/// Purposes used to partition the stream space.
enum class StreamTag : std::uint64_t {
  kInit = 1,
  kRollout = 2,
  kDdpmLoss = 3,
  kMinibatch = 4,
  kData = 5,
  kOracle = 6,
  kRwr = 7,
  kSample = 8,
};

/// Counter-based generator: the draw sequence depends only on (seed, stream).
///
/// Any number of streams can be consumed in any order, on any thread, and
/// each still produces the same values. That is what lets serial and
/// parallel rollouts agree bit for bit.
class StreamRng {
 public:
  StreamRng(std::uint64_t seed, std::uint64_t stream);

  std::uint32_t next_u32();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Standard normal via Box-Muller.
  double normal();
  /// Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n);

  void fill_normal(std::span<double> out);

 private:
  PhiloxKey key_;
  std::uint64_t stream_;
  std::uint64_t block_ = 0;
  PhiloxCounter buffer_{};
  int used_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace ddpolab
