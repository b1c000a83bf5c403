#pragma once

#include <cstddef>
#include <functional>

namespace splinemix {

/// Worker count: SPLINEMIX_THREADS if set to a positive integer, otherwise
/// std::thread::hardware_concurrency() (at least 1).
[[nodiscard]] int default_thread_count();

/// Runs task(i) for i in [0, count) on up to `threads` workers (0 means
/// default_thread_count()). Tasks write to their own indexed slots, so the
/// result never depends on scheduling. The first exception thrown by a
/// task is rethrown after all workers join.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& task,
                  int threads = 0);

}  // namespace splinemix
