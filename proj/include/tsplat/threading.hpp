#pragma once

#include <cstddef>
#include <functional>

namespace tsplat {

// Process-wide worker cap. 0 means "use hardware concurrency".
void set_max_threads(int n);
int max_threads();

// Statically partitioned parallel loop over [0, n). Each index is processed
// exactly once; partitioning depends only on (n, thread count), never on
// timing, so any function whose per-index work writes to disjoint locations
// is deterministic. Reductions must be merged by the caller in index order.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& chunk_fn);

}  // namespace tsplat
