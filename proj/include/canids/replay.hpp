#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <mutex>
#include <optional>
#include <vector>

#include "canids/lower.hpp"
#include "canids/types.hpp"

namespace canids {

/// Blocking bounded MPSC queue used between the feeder and detector threads.
/// A full queue blocks the producer (frames are never dropped) and each such
/// wait is counted as a stall.
template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {}

  void push(T item) {
    std::unique_lock lk(mu_);
    if (items_.size() >= capacity_) {
      ++stalls_;
      not_full_.wait(lk, [&] { return items_.size() < capacity_; });
    }
    items_.push_back(std::move(item));
    lk.unlock();
    not_empty_.notify_one();
  }

  void close() {
    {
      std::lock_guard lk(mu_);
      closed_ = true;
    }
    not_empty_.notify_all();
  }

  /// Blocks until an item is available or the queue is closed and drained.
  std::optional<T> pop() {
    std::unique_lock lk(mu_);
    not_empty_.wait(lk, [&] { return !items_.empty() || closed_; });
    if (items_.empty()) return std::nullopt;
    T item = std::move(items_.front());
    items_.pop_front();
    lk.unlock();
    not_full_.notify_one();
    return item;
  }

  std::uint64_t stalls() const {
    std::lock_guard lk(mu_);
    return stalls_;
  }

 private:
  std::size_t capacity_;
  mutable std::mutex mu_;
  std::condition_variable not_full_;
  std::condition_variable not_empty_;
  std::deque<T> items_;
  std::uint64_t stalls_ = 0;
  bool closed_ = false;
};

struct ReplayConfig {
  /// Timestamp pacing multiplier. 1.0 replays at recorded speed, 2.0 at twice
  /// recorded speed, 0 disables pacing (feed as fast as possible).
  double speed = 0.0;
  std::size_t queue_depth = 64;
};

struct ReplayResult {
  std::uint64_t frames = 0;
  std::uint64_t windows = 0;
  std::uint64_t stalls = 0;
  std::vector<Label> verdicts;  // one per complete window, stream order
  /// Wall-clock time from feeding the first Attack frame to the detector
  /// emitting its first Attack verdict after consuming that frame. Negative
  /// when the stream holds no attack or the attack was never flagged.
  double detect_latency_us = -1.0;
  double wall_s = 0.0;
};

/// Feeds frames through the queue on one thread and runs windowing plus the
/// integer engine on another. With speed 0 the verdict sequence matches the
/// single-threaded batch path exactly.
ReplayResult replay(const IntMlp& model, const std::vector<CanFrame>& frames,
                    const ReplayConfig& cfg);

}  // namespace canids
