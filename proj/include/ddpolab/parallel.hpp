// Copyright 2026 The ddpolab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace ddpolab {

/// Runs fn(i) for i in [0, count) on up to `workers` threads.
///
/// Work items must write only to their own output slots; callers reduce the
/// slots afterwards in index order, which keeps results independent of the
/// worker count. The first exception thrown by any item is rethrown.
void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& fn);

/// Number of fixed-size chunks covering n items.
inline std::size_t chunk_count(std::size_t n, std::size_t chunk) { return (n + chunk - 1) / chunk; }

}  // namespace ddpolab
