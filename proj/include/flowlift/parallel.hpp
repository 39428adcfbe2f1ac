#pragma once

#include <cstddef>
#include <functional>

namespace flowlift {

/// Worker count: hardware concurrency, capped by FLOWLIFT_THREADS when set.
std::size_t worker_count();

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Work items must be
/// independent; the first exception thrown is rethrown on the caller.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn,
                  std::size_t workers = worker_count());

}  // namespace flowlift
