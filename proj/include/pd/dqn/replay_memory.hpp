#pragma once

#include <cstddef>
#include <cstdint>
#include <mutex>
#include <stdexcept>
#include <utility>
#include <vector>

#include "pd/rng.hpp"

namespace pd::dqn {

// Bounded FIFO store with uniform sampling (with replacement). Once full,
// each push evicts the oldest entry.
template <class T>
class ReplayMemory {
 public:
  ReplayMemory(std::size_t capacity, std::uint64_t seed) : capacity_(capacity), rng_(seed) {
    if (capacity == 0) throw std::invalid_argument("ReplayMemory: capacity must be positive");
    ring_.reserve(capacity < 4096 ? capacity : 4096);
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return ring_.size(); }
  bool empty() const { return ring_.empty(); }
  std::uint64_t total_pushed() const { return pushed_; }

  void push(T item) {
    if (ring_.size() < capacity_) {
      ring_.push_back(std::move(item));
    } else {
      ring_[head_] = std::move(item);
      head_ = (head_ + 1) % capacity_;
    }
    ++pushed_;
  }

  // Entry by age: 0 is the oldest stored item.
  const T& at(std::size_t age) const {
    if (age >= ring_.size()) throw std::out_of_range("ReplayMemory::at");
    return ring_[(head_ + age) % ring_.size()];
  }

  // k indices (by age) drawn uniformly with replacement.
  std::vector<std::size_t> sample_indices(std::size_t k) {
    if (ring_.empty()) throw std::logic_error("ReplayMemory: sampling from an empty memory");
    std::vector<std::size_t> idx(k);
    for (auto& i : idx) i = rng_.uniform_int(ring_.size());
    return idx;
  }

  std::vector<const T*> sample(std::size_t k) {
    std::vector<const T*> out;
    out.reserve(k);
    for (std::size_t i : sample_indices(k)) out.push_back(&at(i));
    return out;
  }

  Rng& rng() { return rng_; }

 private:
  std::size_t capacity_;
  std::vector<T> ring_;
  std::size_t head_ = 0;  // oldest entry once the ring is full
  std::uint64_t pushed_ = 0;
  Rng rng_;
};

// Single-producer/single-consumer handoff around a ReplayMemory for the
// pipelined training mode. Runs using it are not bit-deterministic.
template <class T>
class SharedReplayMemory {
 public:
  SharedReplayMemory(std::size_t capacity, std::uint64_t seed) : memory_(capacity, seed) {}

  void push(T item) {
    std::lock_guard lock(mutex_);
    memory_.push(std::move(item));
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return memory_.size();
  }

  // Copies k sampled entries out under the lock.
  std::vector<T> sample_copy(std::size_t k) {
    std::lock_guard lock(mutex_);
    std::vector<T> out;
    out.reserve(k);
    for (std::size_t i : memory_.sample_indices(k)) out.push_back(memory_.at(i));
    return out;
  }

 private:
  mutable std::mutex mutex_;
  ReplayMemory<T> memory_;
};

}  // namespace pd::dqn
