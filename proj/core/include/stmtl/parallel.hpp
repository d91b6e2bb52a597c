#pragma once

#include <cstdint>
#include <functional>

namespace stmtl {

// Forward kernels may fan work out over independent output cells. Every cell
// is computed by exactly one thread with a fixed sequential inner loop, so
// results are bitwise identical for any thread count. Default is 1 thread.
void set_num_threads(int n);
int num_threads();

/// Runs body(lo, hi) over a static partition of [0, n). Threads are only
/// used when each would receive at least min_chunk items.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& body,
                  std::int64_t min_chunk = 1);

}  // namespace stmtl
