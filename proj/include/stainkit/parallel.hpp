#pragma once

#include <cstddef>
#include <functional>

namespace stainkit {

/// Runs fn(i) for i in [0, n) on up to `threads` worker threads. Each index
/// must be independent of the others; the first exception thrown by any
/// worker is rethrown after all workers join. threads <= 1 runs inline.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

/// Default worker count (hardware concurrency, at least 1).
int default_thread_count();

}  // namespace stainkit
