// Copyright 2026 The cmst Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <condition_variable>
#include <cstddef>
#include <deque>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace cmst {

/// Fixed-size worker pool handed to trainers as a capability.
///
/// parallel_for blocks until every index has run. Calls made from inside one
/// of this pool's own workers run inline, so nested parallel sections cannot
/// deadlock. Work items must write only to their own output slots; results are
/// then independent of the worker count.
class WorkerPool {
public:
  /// workers == 0 selects std::thread::hardware_concurrency().
  explicit WorkerPool(std::size_t workers = 0);
  ~WorkerPool();

  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  std::size_t size() const noexcept { return threads_.size(); }

  /// Runs fn(i) for i in [0, count). Rethrows the exception of the lowest
  /// failing index after all items finish.
  void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);

private:
  void worker_loop();
  bool on_worker_thread() const;

  std::vector<std::thread> threads_;
  std::deque<std::function<void()>> queue_;
  std::mutex mutex_;
  std::condition_variable cv_;
  bool stopping_ = false;
};

/// parallel_for over an optional pool; a null pool runs serially.
void parallel_for(WorkerPool* pool, std::size_t count, const std::function<void(std::size_t)>& fn);

} // namespace cmst
