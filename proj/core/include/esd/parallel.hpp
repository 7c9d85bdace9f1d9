#pragma once

#include <cstdint>
#include <functional>

namespace esd {

/// Resolves an effective worker count: `requested` if positive, otherwise the
/// hardware concurrency. The ESD_THREADS environment variable, when set to a
/// positive integer, overrides both.
int resolve_threads(int requested);

/// Runs fn(begin, end) over a static partition of [0, n) on `threads`
/// workers. Chunk boundaries depend only on (n, threads); workers never share
/// mutable state, so results are deterministic for a fixed partition.
void parallel_for(std::int64_t n, int threads,
                  const std::function<void(std::int64_t, std::int64_t)>& fn);

/// Same as parallel_for but over fixed-size blocks: fn(begin, end) is always
/// called with end - begin == block (except the tail), regardless of the
/// worker count. Use when per-block arithmetic must not depend on threading.
void parallel_for_blocked(std::int64_t n, std::int64_t block, int threads,
                          const std::function<void(std::int64_t, std::int64_t)>& fn);

}  // namespace esd
