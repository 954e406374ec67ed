#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace svcm {

namespace detail {
inline std::atomic<int>& thread_override() {
  static std::atomic<int> value{0};
  return value;
}
inline thread_local bool in_parallel_region = false;
}  // namespace detail

/// Number of worker threads. SVCM_THREADS caps it; set_thread_count() overrides both.
inline int thread_count() {
  if (int forced = detail::thread_override().load(); forced > 0) return forced;
  int hw = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("SVCM_THREADS")) {
    try {
      int cap = std::stoi(env);
      if (cap > 0) hw = std::min(hw, cap);
    } catch (...) {
    }
  }
  return hw;
}

inline void set_thread_count(int n) { detail::thread_override().store(n); }

/// Runs body(begin, end) over [0, count) split into contiguous chunks.
/// Every index is visited exactly once; callers write disjoint outputs, so
/// results do not depend on the number of threads. Nested calls run serially.
template <class Body>
void parallel_for(std::size_t count, Body&& body, std::size_t min_chunk = 256) {
  if (count == 0) return;
  const int threads = detail::in_parallel_region ? 1 : thread_count();
  const std::size_t max_workers = std::max<std::size_t>(1, count / std::max<std::size_t>(1, min_chunk));
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), max_workers);
  if (workers <= 1) {
    body(std::size_t{0}, count);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::exception_ptr error;
  std::mutex error_mutex;
  const std::size_t chunk = (count + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(count, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&, begin, end] {
      detail::in_parallel_region = true;
      try {
        body(begin, end);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
      detail::in_parallel_region = false;
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace svcm
