// Copyright 2026 The cmst Authors
// SPDX-License-Identifier: Apache-2.0

#include "cmst/thread_pool.hpp"

#include <atomic>
#include <exception>
#include <limits>

namespace cmst {

namespace {
thread_local const WorkerPool* tls_current_pool = nullptr;
}

WorkerPool::WorkerPool(std::size_t workers) {
  if (workers == 0)
    workers = std::max(1u, std::thread::hardware_concurrency());
  threads_.reserve(workers);
  for (std::size_t i = 0; i < workers; ++i)
    threads_.emplace_back([this] { worker_loop(); });
}

WorkerPool::~WorkerPool() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  cv_.notify_all();
  for (auto& t : threads_)
    t.join();
}

bool WorkerPool::on_worker_thread() const { return tls_current_pool == this; }

void WorkerPool::worker_loop() {
  tls_current_pool = this;
  for (;;) {
    std::function<void()> job;
    {
      std::unique_lock lock(mutex_);
      cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
      if (queue_.empty())
        return;
      job = std::move(queue_.front());
      queue_.pop_front();
    }
    job();
  }
}

void WorkerPool::parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn) {
  if (count == 0)
    return;
  if (threads_.size() <= 1 || count == 1 || on_worker_thread()) {
    for (std::size_t i = 0; i < count; ++i)
      fn(i);
    return;
  }

  std::atomic<std::size_t> next{0};
  std::size_t done_workers = 0;
  std::size_t failed_index = std::numeric_limits<std::size_t>::max();
  std::exception_ptr failure;
  std::mutex done_mutex;
  std::condition_variable done_cv;

  const std::size_t jobs = std::min(count, threads_.size());
  auto body = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count)
        break;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(done_mutex);
        if (i < failed_index) {
          failed_index = i;
          failure = std::current_exception();
        }
      }
    }
    std::lock_guard lock(done_mutex);
    if (++done_workers == jobs)
      done_cv.notify_one();
  };

  {
    std::lock_guard lock(mutex_);
    for (std::size_t j = 0; j < jobs; ++j)
      queue_.emplace_back(body);
  }
  cv_.notify_all();

  std::unique_lock lock(done_mutex);
  done_cv.wait(lock, [&] { return done_workers == jobs; });
  if (failure)
    std::rethrow_exception(failure);
}

void parallel_for(WorkerPool* pool, std::size_t count, const std::function<void(std::size_t)>& fn) {
  if (pool) {
    pool->parallel_for(count, fn);
    return;
  }
  for (std::size_t i = 0; i < count; ++i)
    fn(i);
}

} // namespace cmst
