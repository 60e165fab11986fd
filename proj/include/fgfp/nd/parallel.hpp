#pragma once

#include <cstddef>
#include <functional>

namespace fgfp::nd {

// Worker cap: FGFP_THREADS if set, else hardware concurrency. Always >= 1.
std::size_t worker_count();

// Runs body(i) for i in [0, n). Iterations are split into contiguous chunks,
// one per worker; callers must write to disjoint outputs per i.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace fgfp::nd
