#pragma once

#include <cstddef>
#include <functional>

namespace ijcov {

/// Worker count from IJCOV_THREADS, falling back to hardware concurrency.
std::size_t default_thread_count();

/// Runs body(i) for i in [0, count) on up to `threads` workers (0 = default).
/// Callers write results into slot i, so reductions stay in index order and
/// outputs do not depend on the worker count. If any body throws, the
/// exception from the lowest index is rethrown after all workers finish.
void parallel_for(std::size_t count, std::size_t threads,
                  const std::function<void(std::size_t)>& body);

}  // namespace ijcov
