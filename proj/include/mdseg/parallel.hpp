#pragma once

#include <cstddef>
#include <functional>

namespace mdseg {

/// Worker cap from MDSEG_THREADS (unset or invalid: hardware concurrency, at least 1).
int worker_threads();

/// Runs body(i) for i in [0, n) on up to worker_threads() threads. Callers write
/// results into per-index slots and reduce them in index order afterwards, so the
/// outcome never depends on the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace mdseg
