#include "lasr/core.h"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <thread>

namespace lasr {

namespace {

int default_threads() {
  int n = int(std::thread::hardware_concurrency());
  if (n <= 0) n = 1;
  if (const char* env = std::getenv("LASR_THREADS")) {
    int cap = std::atoi(env);
    if (cap > 0) n = std::min(n, cap);
  }
  return n;
}

int g_threads = 0;

}  // namespace

int thread_count() {
  if (g_threads <= 0) g_threads = default_threads();
  return g_threads;
}

void set_thread_count(int n) { g_threads = std::max(1, n); }

void parallel_bands(int64_t n, int n_bands,
                    const std::function<void(int, int64_t, int64_t)>& fn) {
  if (n <= 0) return;
  n_bands = int(std::min<int64_t>(n_bands, n));
  n_bands = std::max(n_bands, 1);
  auto band_range = [&](int b, int64_t& begin, int64_t& end) {
    begin = n * b / n_bands;
    end = n * (b + 1) / n_bands;
  };

  int workers = std::min(thread_count(), n_bands);
  if (workers <= 1) {
    for (int b = 0; b < n_bands; ++b) {
      int64_t begin, end;
      band_range(b, begin, end);
      fn(b, begin, end);
    }
    return;
  }

  std::atomic<int> next{0};
  auto work = [&]() {
    for (;;) {
      int b = next.fetch_add(1);
      if (b >= n_bands) break;
      int64_t begin, end;
      band_range(b, begin, end);
      fn(b, begin, end);
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (int i = 0; i < workers - 1; ++i) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
}

}  // namespace lasr
