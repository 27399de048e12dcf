#pragma once

// Fixed-size worker pool. All parallel work in the library goes through
// parallel_for; with one thread everything runs inline on the caller.

#include <condition_variable>
#include <cstddef>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace sysrisk {

class WorkerPool {
 public:
  explicit WorkerPool(unsigned threads = 1);
  ~WorkerPool();
  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  unsigned threads() const { return static_cast<unsigned>(workers_.size()) + 1; }

  /// Calls body(k) for k in [0, n). If any call throws, the exception from
  /// the smallest failing k is rethrown after all calls have finished.
  void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

 private:
  void worker_loop();
  void run_share();

  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable wake_, done_;
  const std::function<void(std::size_t)>* body_ = nullptr;
  std::size_t n_ = 0, next_ = 0, finished_ = 0;
  std::size_t generation_ = 0;
  bool stop_ = false;
  std::size_t error_index_ = 0;
  std::exception_ptr error_;
};

/// Runs on `pool` when given, inline otherwise.
void parallel_for(WorkerPool* pool, std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace sysrisk
