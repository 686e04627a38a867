#pragma once

#include <condition_variable>
#include <cstddef>
#include <algorithm>
#include <deque>
#include <mutex>
#include <optional>

#include "mobillm/error.hpp"

namespace mobillm {

// Blocking FIFO with a fixed capacity. close() wakes everyone; pop() keeps
// returning queued items until the queue is drained.
template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw ConfigError("queue depth must be at least 1");
  }

  // Returns false if the queue was closed before space became available.
  // `weight` (e.g. payload bytes) is summed over queued items.
  bool push(T item, std::size_t weight = 0) {
    std::unique_lock lock(mutex_);
    not_full_.wait(lock, [&] { return closed_ || items_.size() < capacity_; });
    if (closed_) return false;
    items_.push_back(std::move(item));
    weights_.push_back(weight);
    weight_ += weight;
    high_water_ = std::max(high_water_, items_.size());
    max_weight_ = std::max(max_weight_, weight_);
    not_empty_.notify_one();
    return true;
  }

  std::optional<T> pop() {
    std::unique_lock lock(mutex_);
    not_empty_.wait(lock, [&] { return closed_ || !items_.empty(); });
    if (items_.empty()) return std::nullopt;
    T item = std::move(items_.front());
    items_.pop_front();
    weight_ -= weights_.front();
    weights_.pop_front();
    not_full_.notify_one();
    return item;
  }

  void close() {
    std::lock_guard lock(mutex_);
    closed_ = true;
    not_full_.notify_all();
    not_empty_.notify_all();
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return items_.size();
  }
  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t high_water() const {
    std::lock_guard lock(mutex_);
    return high_water_;
  }
  // Largest total weight ever held at once.
  std::size_t max_weight() const {
    std::lock_guard lock(mutex_);
    return max_weight_;
  }

 private:
  const std::size_t capacity_;
  mutable std::mutex mutex_;
  std::condition_variable not_full_;
  std::condition_variable not_empty_;
  std::deque<T> items_;
  std::deque<std::size_t> weights_;
  std::size_t weight_ = 0;
  std::size_t max_weight_ = 0;
  std::size_t high_water_ = 0;
  bool closed_ = false;
};

}  // namespace mobillm
