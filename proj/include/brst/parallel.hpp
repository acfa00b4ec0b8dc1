#pragma once

#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace brst {

// Worker cap: BRST_THREADS when set, hardware concurrency otherwise.
inline unsigned max_workers() {
  if (const char* env = std::getenv("BRST_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<unsigned>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

// Index-ordered parallel map over [0, n). Results land in slot order, so
// the output is independent of scheduling.
template <typename T>
std::vector<T> parallel_map(size_t n, const std::function<T(size_t)>& fn) {
  std::vector<T> results(n);
  const unsigned workers = std::min<size_t>(max_workers(), n == 0 ? 1 : n);
  if (workers <= 1) {
    for (size_t i = 0; i < n; ++i) results[i] = fn(i);
    return results;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      try {
        for (size_t i = w; i < n; i += workers) results[i] = fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return results;
}

}  // namespace brst
