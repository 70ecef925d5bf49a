// Copyright 2026 The ddpolab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "ddpolab/param_store.hpp"

namespace ddpolab {

/// Checkpoint layout, all little-endian:
///   "DDPOLAB1"
///   u32 segment count
///   per segment: u16 name length, name bytes, u32 extent count,
///                u32 extents..., f64 data...
std::vector<std::uint8_t> serialize_checkpoint(const ParamStore& params);
ParamStore deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params);
ParamStore load_checkpoint(const std::filesystem::path& path);

/// Hash of the serialized form; identifies a parameter snapshot.
std::uint64_t checkpoint_hash(const ParamStore& params);

}  // namespace ddpolab
