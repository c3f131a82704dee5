#include "sigmap/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace sigmap {
namespace {

int initial_thread_count() {
  if (const char* env = std::getenv("SIGMAP_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) return n;
    } catch (const std::exception&) {
    }
  }
  return 1;
}

std::atomic<int>& configured_threads() {
  static std::atomic<int> n{initial_thread_count()};
  return n;
}

thread_local bool inside_parallel_region = false;

}  // namespace

int thread_count() { return configured_threads().load(); }

void set_thread_count(int n) { configured_threads().store(std::max(1, n)); }

void parallel_chunks(std::size_t n, std::size_t chunks,
                     const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
  if (n == 0) return;
  chunks = std::clamp<std::size_t>(chunks, 1, n);
  auto bounds = [&](std::size_t c) { return std::pair{n * c / chunks, n * (c + 1) / chunks}; };

  const int workers = std::min<int>(thread_count(), static_cast<int>(chunks));
  if (workers <= 1 || inside_parallel_region) {
    for (std::size_t c = 0; c < chunks; ++c) {
      const auto [b, e] = bounds(c);
      fn(c, b, e);
    }
    return;
  }

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    inside_parallel_region = true;
    for (std::size_t c; (c = next.fetch_add(1)) < chunks;) {
      try {
        const auto [b, e] = bounds(c);
        fn(c, b, e);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
    inside_parallel_region = false;
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers - 1));
  for (int i = 1; i < workers; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  parallel_chunks(n, n, [&](std::size_t, std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) fn(i);
  });
}

}  // namespace sigmap
