#pragma once

#include <condition_variable>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace beacon {

/// Minimal persistent worker pool for data-parallel loops. Work items write
/// to disjoint slots, so results do not depend on scheduling; reductions are
/// done by the caller in fixed index order.
class ThreadPool {
 public:
  /// n <= 1 means run everything inline on the calling thread.
  explicit ThreadPool(int n);
  ~ThreadPool();

  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

  /// Run fn(i) for i in [0, count). Blocks until all items finish.
  void parallel_for(int count, const std::function<void(int)>& fn);

  int size() const { return static_cast<int>(workers_.size()) + 1; }

 private:
  void worker_loop();

  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable cv_start_;
  std::condition_variable cv_done_;
  const std::function<void(int)>* fn_ = nullptr;
  int count_ = 0;
  int next_ = 0;
  int active_ = 0;
  uint64_t generation_ = 0;
  bool stop_ = false;
};

}  // namespace beacon
