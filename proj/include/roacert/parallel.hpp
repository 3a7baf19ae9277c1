#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace roa {

// Runs body(begin, end) over contiguous chunks of [0, n), one chunk per
// worker. Callers write results into disjoint preallocated slots, so the
// output is identical for any thread count.
inline void parallel_for(std::size_t n,
                         const std::function<void(std::size_t, std::size_t)>& body,
                         unsigned num_threads = 0) {
  if (n == 0) return;
  unsigned hw = num_threads ? num_threads : std::thread::hardware_concurrency();
  if (hw < 2 || n < 1024) {
    body(0, n);
    return;
  }
  unsigned workers = static_cast<unsigned>(std::min<std::size_t>(hw, n));
  std::size_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    std::size_t b = w * chunk;
    std::size_t e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&body, b, e] { body(b, e); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace roa
