#include "sysrisk/parallel.hpp"

#include <exception>

namespace sysrisk {

WorkerPool::WorkerPool(unsigned threads) {
  for (unsigned t = 1; t < threads; ++t) workers_.emplace_back([this] { worker_loop(); });
}

WorkerPool::~WorkerPool() {
  {
    std::lock_guard lock(mu_);
    stop_ = true;
  }
  wake_.notify_all();
  for (auto& w : workers_) w.join();
}

void WorkerPool::run_share() {
  for (;;) {
    std::size_t k;
    {
      std::lock_guard lock(mu_);
      if (next_ >= n_) return;
      k = next_++;
    }
    try {
      (*body_)(k);
    } catch (...) {
      std::lock_guard lock(mu_);
      if (!error_ || k < error_index_) {
        error_ = std::current_exception();
        error_index_ = k;
      }
    }
    std::lock_guard lock(mu_);
    if (++finished_ == n_) done_.notify_all();
  }
}

void WorkerPool::worker_loop() {
  std::size_t seen = 0;
  for (;;) {
    {
      std::unique_lock lock(mu_);
      wake_.wait(lock, [&] { return stop_ || generation_ != seen; });
      if (stop_) return;
      seen = generation_;
    }
    run_share();
  }
}

void WorkerPool::parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
  if (n == 0) return;
  if (workers_.empty()) {
    for (std::size_t k = 0; k < n; ++k) body(k);
    return;
  }
  {
    std::lock_guard lock(mu_);
    body_ = &body;
    n_ = n;
    next_ = 0;
    finished_ = 0;
    error_ = nullptr;
    ++generation_;
  }
  wake_.notify_all();
  run_share();
  std::exception_ptr err;
  {
    std::unique_lock lock(mu_);
    done_.wait(lock, [&] { return finished_ == n_; });
    body_ = nullptr;
    n_ = 0;
    err = error_;
  }
  if (err) std::rethrow_exception(err);
}

void parallel_for(WorkerPool* pool, std::size_t n, const std::function<void(std::size_t)>& body) {
  if (pool) {
    pool->parallel_for(n, body);
  } else {
    for (std::size_t k = 0; k < n; ++k) body(k);
  }
}

}  // namespace sysrisk
