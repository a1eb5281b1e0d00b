#pragma once

// Deterministic data parallelism: work is cut into fixed-size chunks that do
// not depend on the thread count, and per-chunk results come back in chunk
// order so reductions are bit-reproducible.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace toral {

/// Worker threads to use: TORAL_THREADS if set and positive, else the
/// hardware concurrency.
inline unsigned thread_count() {
  if (const char* env = std::getenv("TORAL_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<unsigned>(v);
    } catch (...) {
    }
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

/// Runs fn(begin, end) over [0, n) in chunks of `chunk` and returns one
/// result per chunk, in order.
template <class Fn>
auto map_chunks(std::int64_t n, std::int64_t chunk, Fn&& fn)
    -> std::vector<decltype(fn(std::int64_t{}, std::int64_t{}))> {
  using Result = decltype(fn(std::int64_t{}, std::int64_t{}));
  if (n <= 0) return {};
  chunk = std::max<std::int64_t>(chunk, 1);
  const std::int64_t chunks = (n + chunk - 1) / chunk;
  std::vector<Result> out(static_cast<std::size_t>(chunks));

  const unsigned workers =
      static_cast<unsigned>(std::min<std::int64_t>(thread_count(), chunks));
  auto run = [&](std::int64_t c) {
    const std::int64_t b = c * chunk;
    out[static_cast<std::size_t>(c)] = fn(b, std::min(n, b + chunk));
  };
  if (workers <= 1) {
    for (std::int64_t c = 0; c < chunks; ++c) run(c);
    return out;
  }

  std::atomic<std::int64_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::int64_t c; (c = next.fetch_add(1)) < chunks;) {
        try {
          run(c);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

}  // namespace toral
