#pragma once

#include <atomic>
#include <barrier>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace aggeq {

/// Runs one per-agent phase of a synchronous round, either inline or split
/// over a fixed pool of workers that meet at a barrier after every phase.
/// Agents are assigned to workers in contiguous chunks; each agent's work
/// only touches its own output slot, so results never depend on the worker
/// count.
class RoundExecutor {
 public:
  explicit RoundExecutor(int workers = 1)
      : workers_(workers < 1 ? 1 : workers), sync_(workers_) {
    for (int w = 1; w < workers_; ++w) {
      threads_.emplace_back([this, w] { worker_loop(w); });
    }
  }

  RoundExecutor(const RoundExecutor&) = delete;
  RoundExecutor& operator=(const RoundExecutor&) = delete;

  ~RoundExecutor() {
    if (workers_ > 1) {
      stop_ = true;
      sync_.arrive_and_wait();
    }
    for (auto& t : threads_) t.join();
  }

  int workers() const { return workers_; }

  void for_each_agent(int n, const std::function<void(int)>& fn) {
    if (workers_ == 1) {
      for (int i = 0; i < n; ++i) fn(i);
      return;
    }
    task_ = &fn;
    count_ = n;
    error_ = nullptr;
    sync_.arrive_and_wait();  // release workers
    run_chunk(0);
    sync_.arrive_and_wait();  // phase done
    task_ = nullptr;
    if (error_) std::rethrow_exception(error_);
  }

 private:
  void worker_loop(int w) {
    for (;;) {
      sync_.arrive_and_wait();
      if (stop_) return;
      run_chunk(w);
      sync_.arrive_and_wait();
    }
  }

  void run_chunk(int w) {
    const int begin = count_ * w / workers_;
    const int end = count_ * (w + 1) / workers_;
    try {
      for (int i = begin; i < end; ++i) (*task_)(i);
    } catch (...) {
      std::lock_guard lock(error_mutex_);
      if (!error_) error_ = std::current_exception();
    }
  }

  int workers_;
  std::barrier<> sync_;
  std::vector<std::thread> threads_;
  const std::function<void(int)>* task_ = nullptr;
  int count_ = 0;
  std::atomic<bool> stop_{false};
  std::exception_ptr error_;
  std::mutex error_mutex_;
};

}  // namespace aggeq
