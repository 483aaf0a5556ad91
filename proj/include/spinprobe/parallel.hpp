// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>

namespace spinprobe {

/// Parallel-map capability handed to the compute modules. Work is split into contiguous
/// index ranges; callers must make each index's result independent of the split so the
/// output does not depend on the worker count.
class Executor {
 public:
  /// threads == 0 selects the number of logical cores.
  explicit Executor(unsigned threads = 1);

  unsigned concurrency() const { return threads_; }

  /// Calls body(begin, end, worker) over disjoint chunks covering [0, n). Blocks until done;
  /// the first exception thrown by any worker is rethrown here.
  void parallel_for(std::size_t n,
                    const std::function<void(std::size_t, std::size_t, unsigned)>& body) const;

 private:
  unsigned threads_;
};

/// Thread count resolution: explicit flag, then the SPINPROBE_THREADS environment variable,
/// then the configured value, then the number of logical cores.
unsigned resolve_thread_count(unsigned flag_value, unsigned config_value);

inline constexpr const char* kThreadsEnvVar = "SPINPROBE_THREADS";

}  // namespace spinprobe
