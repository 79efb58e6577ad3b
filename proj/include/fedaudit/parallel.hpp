#pragma once

#include <cstdlib>
#include <thread>
#include <vector>

// Deterministic work splitting: every item writes only its own slot, so the
// result is identical whether work runs on one thread or many. Thread count
// comes from the FEDAUDIT_THREADS environment variable, default 1.

namespace fedaudit {

inline std::size_t thread_count() {
  static const std::size_t count = [] {
    const char* env = std::getenv("FEDAUDIT_THREADS");
    if (!env) return std::size_t{1};
    const long v = std::strtol(env, nullptr, 10);
    return v > 1 ? static_cast<std::size_t>(v) : std::size_t{1};
  }();
  return count;
}

template <typename Fn>
void parallel_for(std::size_t count, Fn&& fn) {
  const std::size_t threads = std::min(thread_count(), count == 0 ? 1 : count);
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < count; i += threads) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace fedaudit
