#pragma once

#include <cstdint>
#include <cstdlib>
#include <thread>
#include <utility>
#include <vector>

namespace desdis {

// Worker cap: DESDIS_THREADS when set, otherwise the hardware core count.
inline int max_threads() {
  static const int cached = [] {
    if (const char* env = std::getenv("DESDIS_THREADS")) {
      const int v = std::atoi(env);
      if (v >= 1) return v;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
  }();
  return cached;
}

namespace detail {
inline bool& in_parallel_region() {
  thread_local bool flag = false;
  return flag;
}
}  // namespace detail

// Runs fn(begin, end) over disjoint chunks of [0, n). Callers must write only
// to locations owned by their index range; any cross-chunk reduction has to
// be performed afterwards in a fixed order. Nested calls degrade to serial.
template <typename Fn>
void parallel_for(std::int64_t n, Fn&& fn) {
  if (n <= 0) return;
  const int threads = detail::in_parallel_region()
                          ? 1
                          : static_cast<int>(std::min<std::int64_t>(max_threads(), n));
  if (threads <= 1) {
    fn(std::int64_t{0}, n);
    return;
  }
  const std::int64_t chunk = (n + threads - 1) / threads;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads - 1));
  for (int t = 1; t < threads; ++t) {
    const std::int64_t begin = t * chunk;
    const std::int64_t end = std::min<std::int64_t>(begin + chunk, n);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] {
      detail::in_parallel_region() = true;
      fn(begin, end);
      detail::in_parallel_region() = false;
    });
  }
  {
    detail::in_parallel_region() = true;
    fn(std::int64_t{0}, std::min<std::int64_t>(chunk, n));
    detail::in_parallel_region() = false;
  }
  for (auto& th : pool) th.join();
}

}  // namespace desdis
