#pragma once

#include <algorithm>
#include <thread>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fld::nn {

// Worker cap for batch-level loops. 0 = use hardware concurrency.
inline int& thread_limit() {
  static int limit = 0;
  return limit;
}

inline void set_thread_limit(int n) { thread_limit() = n; }

inline int effective_threads() {
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw <= 0) hw = 1;
  int lim = thread_limit();
  return lim > 0 ? std::min(lim, hw) : hw;
}

// Runs fn(0..n-1). Callers must only write disjoint outputs; any cross-item
// reduction has to be summed afterwards in item order so results do not
// depend on the schedule or the thread count.
template <typename F>
void parallel_for(int n, F&& fn) {
#ifdef _OPENMP
  if (n > 1 && effective_threads() > 1) {
#pragma omp parallel for schedule(dynamic, 1) num_threads(std::min(n, effective_threads()))
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
#endif
  for (int i = 0; i < n; ++i) fn(i);
}

}  // namespace fld::nn
