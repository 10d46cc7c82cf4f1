#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace focal {

namespace detail {
inline thread_local bool in_parallel_region = false;
}  // namespace detail

/// Worker count from FOCAL_THREADS; falls back to the hardware concurrency.
inline std::size_t thread_count() {
  if (const char* env = std::getenv("FOCAL_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v >= 1) return static_cast<std::size_t>(v);
    } catch (...) {
    }
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

/// Static partition of [0, n) into contiguous chunks, one per worker.
/// `body(begin, end)` must only write to state owned by its own index range;
/// results are then independent of the worker count.
template <typename Body>
void parallel_for(std::size_t n, Body&& body, std::size_t workers = thread_count()) {
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(n, 1));
  // Nested calls run inline on the calling worker.
  if (workers == 1 || n < 2 || detail::in_parallel_region) {
    body(std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  pool.reserve(workers - 1);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 1; w < workers; ++w) {
    const std::size_t begin = std::min(n, w * chunk);
    const std::size_t end = std::min(n, begin + chunk);
    pool.emplace_back([&, w, begin, end] {
      detail::in_parallel_region = true;
      try {
        body(begin, end);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  detail::in_parallel_region = true;
  try {
    body(std::size_t{0}, std::min(n, chunk));
  } catch (...) {
    errors[0] = std::current_exception();
  }
  detail::in_parallel_region = false;
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace focal
