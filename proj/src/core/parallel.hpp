// Copyright 2026 The Appa Toy Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace appa {

/// Thread count used by ensemble fan-out: explicit override if positive,
/// else APPA_TOY_THREADS, else 1.
std::size_t resolve_threads(int requested = 0);

/// Runs body(i) for i in [0, n) on up to `threads` workers. Indices are
/// handed out statically, so results only depend on i. The first exception
/// thrown by any worker is rethrown after all workers join.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& body);

}  // namespace appa
