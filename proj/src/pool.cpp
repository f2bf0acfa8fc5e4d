#include "beacon/pool.hpp"

namespace beacon {

ThreadPool::ThreadPool(int n) {
  int workers = n - 1;
  if (workers < 0) workers = 0;
  workers_.reserve(workers);
  for (int i = 0; i < workers; ++i) workers_.emplace_back([this] { worker_loop(); });
}

ThreadPool::~ThreadPool() {
  {
    std::unique_lock<std::mutex> lock(mu_);
    stop_ = true;
  }
  cv_start_.notify_all();
  for (auto& t : workers_) t.join();
}

void ThreadPool::worker_loop() {
  uint64_t seen = 0;
  for (;;) {
    std::unique_lock<std::mutex> lock(mu_);
    cv_start_.wait(lock, [&] { return stop_ || generation_ != seen; });
    if (stop_) return;
    seen = generation_;
    ++active_;
    while (next_ < count_) {
      int i = next_++;
      lock.unlock();
      (*fn_)(i);
      lock.lock();
    }
    if (--active_ == 0 && next_ >= count_) cv_done_.notify_all();
  }
}

void ThreadPool::parallel_for(int count, const std::function<void(int)>& fn) {
  if (count <= 0) return;
  if (workers_.empty() || count == 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::unique_lock<std::mutex> lock(mu_);
  fn_ = &fn;
  count_ = count;
  next_ = 0;
  ++generation_;
  cv_start_.notify_all();
  // The calling thread pitches in too.
  ++active_;
  while (next_ < count_) {
    int i = next_++;
    lock.unlock();
    fn(i);
    lock.lock();
  }
  --active_;
  cv_done_.wait(lock, [&] { return active_ == 0 && next_ >= count_; });
  fn_ = nullptr;
}

}  // namespace beacon
