#pragma once

// Static-partition parallel loop over independent work items.

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace dcnf {

/// Worker count: DCNF_THREADS if set to a positive integer, otherwise the
/// hardware concurrency.
inline int thread_count() {
  if (const char* env = std::getenv("DCNF_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) return n;
    } catch (const std::exception&) {
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Calls f(i) for i in [0, count). The first exception is rethrown after all
/// workers finish.
template <class F>
void parallel_for(size_t count, F&& f, int threads = thread_count()) {
  const size_t workers = std::min<size_t>(static_cast<size_t>(std::max(1, threads)), count);
  if (workers <= 1) {
    for (size_t i = 0; i < count; ++i) f(i);
    return;
  }
  std::exception_ptr error;
  std::mutex mutex;
  std::vector<std::thread> pool;
  for (size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (size_t i = w; i < count; i += workers) {
        try {
          f(i);
        } catch (...) {
          std::lock_guard lock(mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace dcnf
