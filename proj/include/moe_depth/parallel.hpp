#pragma once

#include <cstddef>
#include <functional>

namespace moe_depth {

/// Worker count: MOE_DEPTH_THREADS if set to a positive integer, else all cores.
int thread_count();

/// Runs fn(i) for i in [0, n) on up to thread_count() workers. Results must be
/// written to caller-owned slots indexed by i, so output order never depends on
/// scheduling. The exception of the lowest failing index is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace moe_depth
