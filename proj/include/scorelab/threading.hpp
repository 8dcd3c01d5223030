#pragma once

#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace scorelab {

// Batch parallelism cap: SCORELAB_THREADS, defaulting to the hardware count.
inline unsigned max_threads() {
  if (const char* env = std::getenv("SCORELAB_THREADS")) {
    long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<unsigned>(v);
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw ? hw : 1;
}

// Runs fn(i) for i in [0, n). Work items must be independent and write to
// disjoint slots so the result is identical at any thread count.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  unsigned threads = std::min<std::size_t>(max_threads(), n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (unsigned w = 0; w < threads; ++w) {
    pool.emplace_back([=, &fn] {
      for (std::size_t i = w; i < n; i += threads) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace scorelab
