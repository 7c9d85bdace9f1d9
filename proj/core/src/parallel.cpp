#include "esd/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace esd {

int resolve_threads(int requested) {
  if (const char* env = std::getenv("ESD_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end && *end == '\0' && v > 0) return static_cast<int>(v);
  }
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

namespace {

void run_workers(int workers, const std::function<void(int)>& body) {
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  auto guarded = [&](int w) {
    try {
      body(w);
    } catch (...) {
      if (!failed.exchange(true)) error = std::current_exception();
    }
  };
  for (int w = 1; w < workers; ++w) pool.emplace_back(guarded, w);
  guarded(0);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace

void parallel_for(std::int64_t n, int threads,
                  const std::function<void(std::int64_t, std::int64_t)>& fn) {
  if (n <= 0) return;
  const int workers =
      static_cast<int>(std::max<std::int64_t>(1, std::min<std::int64_t>(threads, n)));
  if (workers == 1) {
    fn(0, n);
    return;
  }
  const std::int64_t chunk = (n + workers - 1) / workers;
  run_workers(workers, [&](int w) {
    const std::int64_t begin = w * chunk;
    const std::int64_t end = std::min<std::int64_t>(begin + chunk, n);
    if (begin < end) fn(begin, end);
  });
}

void parallel_for_blocked(std::int64_t n, std::int64_t block, int threads,
                          const std::function<void(std::int64_t, std::int64_t)>& fn) {
  if (n <= 0) return;
  if (block <= 0) throw std::invalid_argument("parallel_for_blocked: block must be positive");
  const std::int64_t n_blocks = (n + block - 1) / block;
  const int workers =
      static_cast<int>(std::max<std::int64_t>(1, std::min<std::int64_t>(threads, n_blocks)));
  std::atomic<std::int64_t> next{0};
  run_workers(workers, [&](int) {
    for (;;) {
      const std::int64_t b = next.fetch_add(1);
      if (b >= n_blocks) break;
      const std::int64_t begin = b * block;
      fn(begin, std::min(begin + block, n));
    }
  });
}

}  // namespace esd
