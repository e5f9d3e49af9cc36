#pragma once

#include <cstdint>

namespace rcan {

// Worker cap for internal kernels: RCAN_NUM_THREADS if set and positive,
// otherwise the hardware concurrency. Read once per process.
int thread_count() noexcept;

// Runs body(i) for i in [0, n). Each index must write a disjoint output
// region so results do not depend on the schedule.
template <typename Body>
void parallel_for(std::int64_t n, Body&& body) {
#if defined(RCAN_HAVE_OPENMP)
  const int threads = thread_count();
  if (threads > 1 && n > 1) {
#pragma omp parallel for schedule(static) num_threads(threads)
    for (std::int64_t i = 0; i < n; ++i) body(i);
    return;
  }
#endif
  for (std::int64_t i = 0; i < n; ++i) body(i);
}

}  // namespace rcan
