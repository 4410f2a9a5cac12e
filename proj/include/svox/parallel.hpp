#pragma once

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace svox {

/// Worker count: explicit value if positive, else SVOX_THREADS, else the
/// hardware concurrency.
inline int resolve_threads(int requested = 0) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("SVOX_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

/// Runs fn(item, worker) for item in [begin, end) on up to `threads` workers.
/// Item i is always handled by worker (i - begin) % threads. The first
/// exception thrown by any worker is rethrown.
template <class F>
void parallel_for(std::size_t begin, std::size_t end, int threads, F&& fn) {
  const std::size_t n = end > begin ? end - begin : 0;
  const int k = static_cast<int>(std::min<std::size_t>(std::max(threads, 1), n));
  if (k <= 1) {
    for (std::size_t i = begin; i < end; ++i) fn(i, 0);
    return;
  }
  std::vector<std::exception_ptr> errors(k);
  {
    std::vector<std::jthread> pool;
    pool.reserve(k);
    for (int w = 0; w < k; ++w)
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = begin + w; i < end; i += k) fn(i, w);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace svox
