// SPDX-License-Identifier: Apache-2.0
#include "spinprobe/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace spinprobe {

namespace {

unsigned hardware_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

}  // namespace

Executor::Executor(unsigned threads) : threads_(threads == 0 ? hardware_threads() : threads) {}

void Executor::parallel_for(std::size_t n,
                            const std::function<void(std::size_t, std::size_t, unsigned)>& body) const {
  if (n == 0) return;
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(threads_, n));
  if (workers <= 1) {
    body(0, n, 0);
    return;
  }
  // dynamic chunking; results must not depend on which worker takes a chunk
  const std::size_t chunk = std::max<std::size_t>(1, n / (static_cast<std::size_t>(workers) * 8));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (;;) {
          const std::size_t begin = next.fetch_add(chunk);
          if (begin >= n) break;
          body(begin, std::min(n, begin + chunk), w);
        }
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(n);
      }
    });
  }
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

unsigned resolve_thread_count(unsigned flag_value, unsigned config_value) {
  if (flag_value > 0) return flag_value;
  if (const char* env = std::getenv(kThreadsEnvVar)) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<unsigned>(v);
    } catch (...) {
    }
  }
  if (config_value > 0) return config_value;
  return hardware_threads();
}

}  // namespace spinprobe
