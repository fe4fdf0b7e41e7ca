#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace pyrtri {

/// Threading policy. `threads == 1` is the deterministic single-threaded mode.
struct Execution {
  int threads = 1;

  static Execution deterministic() { return {1}; }
  static Execution hardware() {
    return {static_cast<int>(std::max(1u, std::thread::hardware_concurrency()))};
  }
  bool is_deterministic() const { return threads <= 1; }
};

/// Splits [0, n) into contiguous chunks, one per worker. `fn(begin, end, worker)`.
/// Worker chunks are fixed by (n, threads), so per-worker reductions done in worker
/// order are reproducible for a given thread count.
template <typename Fn>
void parallel_for(std::size_t n, const Execution& exec, Fn&& fn) {
  const std::size_t workers = std::min<std::size_t>(std::max(1, exec.threads), std::max<std::size_t>(n, 1));
  if (workers <= 1) {
    fn(std::size_t{0}, n, std::size_t{0});
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = std::min(n, w * chunk);
    const std::size_t end = std::min(n, begin + chunk);
    pool.emplace_back([&, begin, end, w] {
      try {
        fn(begin, end, w);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline std::size_t worker_count(std::size_t n, const Execution& exec) {
  return std::min<std::size_t>(std::max(1, exec.threads), std::max<std::size_t>(n, 1));
}

}  // namespace pyrtri
