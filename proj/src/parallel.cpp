#include "umat/parallel.hpp"

#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace umat {

namespace {
int g_default_workers = 1;
}

void set_default_workers(int n) { g_default_workers = n < 1 ? 1 : n; }

int default_workers() { return g_default_workers; }

void parallel_chunks(int64_t n_chunks, int workers, const std::function<void(int64_t)>& fn) {
  if (workers <= 0) workers = g_default_workers;
  if (workers > n_chunks) workers = static_cast<int>(n_chunks);
  if (n_chunks <= 0) return;
  if (workers <= 1) {
    for (int64_t i = 0; i < n_chunks; ++i) fn(i);
    return;
  }

  std::atomic<int64_t> next{0};
  std::mutex err_mutex;
  std::exception_ptr first_error;
  auto body = [&] {
    for (;;) {
      int64_t i = next.fetch_add(1);
      if (i >= n_chunks) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };

  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers) - 1);
  for (int t = 1; t < workers; ++t) pool.emplace_back(body);
  body();
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace umat
