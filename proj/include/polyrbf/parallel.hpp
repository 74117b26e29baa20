#pragma once

#include <cstddef>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace polyrbf {

// Static range partition: worker t handles [t*n/T, (t+1)*n/T). Workers only
// write to disjoint preallocated slots, so results never depend on thread
// count or scheduling. The first exception thrown by any worker is rethrown.
inline void parallel_for(std::size_t n, int threads,
                         const std::function<void(std::size_t, std::size_t)>& run_range) {
  if (n == 0) return;
  std::size_t t = threads <= 0 ? std::thread::hardware_concurrency() : std::size_t(threads);
  if (t <= 1 || n == 1) {
    run_range(0, n);
    return;
  }
  if (t > n) t = n;
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errs(t);
  pool.reserve(t);
  for (std::size_t w = 0; w < t; ++w) {
    std::size_t lo = w * n / t, hi = (w + 1) * n / t;
    pool.emplace_back([&, w, lo, hi] {
      try {
        run_range(lo, hi);
      } catch (...) {
        errs[w] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
}

} // namespace polyrbf
