#pragma once

// Deterministic block-parallel map: work is cut into fixed blocks, any
// worker may run any block, and results are returned in block order so a
// reduction over them does not depend on the worker count.

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "zipflow/core.hpp"

namespace zipflow {

inline constexpr const char* kWorkersEnv = "ZIPFLOW_WORKERS";

/// Worker count from ZIPFLOW_WORKERS, else the hardware concurrency.
inline int default_workers() {
  if (const char* env = std::getenv(kWorkersEnv)) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1 && v <= 4096) return static_cast<int>(v);
    throw ValidationError(std::string(kWorkersEnv) + " must be an integer in [1, 4096]");
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs f(block) for block in [0, blocks) on `workers` threads; out[b] = f(b).
template <class R, class F>
std::vector<R> block_map(std::size_t blocks, int workers, F&& f) {
  std::vector<R> out(blocks);
  if (workers <= 1 || blocks <= 1) {
    for (std::size_t b = 0; b < blocks; ++b) out[b] = f(b);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex err_mu;
  auto run = [&] {
    for (;;) {
      const std::size_t b = next.fetch_add(1);
      if (b >= blocks) return;
      try {
        out[b] = f(b);
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (!err) err = std::current_exception();
        next.store(blocks);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  const auto n = static_cast<std::size_t>(workers);
  for (std::size_t i = 0; i + 1 < std::min(n, blocks); ++i) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
  return out;
}

}  // namespace zipflow
