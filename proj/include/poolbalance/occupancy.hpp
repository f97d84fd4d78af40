#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "poolbalance/errors.hpp"

namespace poolbalance {

// Aggregate state of n pools: Q(i) = number of pools with at least i tasks.
// Levels above the stored range read as zero; storage grows on demand.
class CountOccupancy {
 public:
  using count_type = std::int64_t;

  CountOccupancy() = default;
  explicit CountOccupancy(count_type n) : q_{n} {
    if (n < 1) throw ConfigError("occupancy: need at least one pool");
  }

  // counts[k] = Q(k+1), i.e. the vector starts at level 1.
  CountOccupancy(count_type n, const std::vector<count_type>& counts) : CountOccupancy(n) {
    q_.reserve(counts.size() + 1);
    for (count_type c : counts) q_.push_back(c);
    trim();
    validate();
  }

  static CountOccupancy all_at(count_type n, std::size_t level) {
    return CountOccupancy(n, std::vector<count_type>(level, n));
  }

  count_type n() const noexcept { return q_[0]; }
  count_type operator[](std::size_t i) const noexcept { return i < q_.size() ? q_[i] : 0; }
  count_type at_level(std::size_t i) const noexcept { return (*this)[i] - (*this)[i + 1]; }

  // Highest occupied level (0 when every pool is empty).
  std::size_t top() const noexcept { return q_.size() - 1; }

  count_type total_tasks() const noexcept {
    count_type s = 0;
    for (std::size_t i = 1; i < q_.size(); ++i) s += q_[i];
    return s;
  }

  // Level of the pool with rank r (0-based) when pools are sorted by level,
  // i.e. the d with Q(d+1) < n - r <= Q(d).
  std::size_t level_of_rank(count_type r) const noexcept {
    const count_type target = n() - r;
    std::size_t lo = 0, hi = q_.size();  // Q(hi) = 0 < target
    while (hi - lo > 1) {
      const std::size_t mid = lo + (hi - lo) / 2;
      (q_[mid] >= target ? lo : hi) = mid;
    }
    return lo;
  }

  // Level i >= 1 holding the k-th task (0-based) when tasks are listed level
  // by level; a pool at level i contributes i tasks.
  std::size_t level_of_task(count_type k) const noexcept {
    for (std::size_t i = 1; i < q_.size(); ++i) {
      const count_type c = static_cast<count_type>(i) * at_level(i);
      if (k < c) return i;
      k -= c;
    }
    return top();
  }

  // A pool at level d receives one task.
  void add_task(std::size_t d) {
    if (at_level(d) <= 0) throw StateError("occupancy: no pool at level " + std::to_string(d));
    if (d + 1 >= q_.size()) q_.resize(d + 2, 0);
    ++q_[d + 1];
  }

  // A pool at level i >= 1 finishes one task.
  void remove_task(std::size_t i) {
    if (i == 0 || at_level(i) <= 0) throw StateError("occupancy: no pool at level " + std::to_string(i));
    --q_[i];
    trim();
  }

  const std::vector<count_type>& counts() const noexcept { return q_; }

  void validate() const {
    if (q_.empty() || q_[0] < 1) throw StateError("occupancy: Q(0) must be n >= 1");
    for (std::size_t i = 1; i < q_.size(); ++i) {
      if (q_[i] < 0) throw StateError("occupancy: negative count at level " + std::to_string(i));
      if (q_[i] > q_[i - 1])
        throw StateError("occupancy: counts increase at level " + std::to_string(i));
    }
  }

  friend bool operator==(const CountOccupancy& a, const CountOccupancy& b) { return a.q_ == b.q_; }

 private:
  void trim() {
    while (q_.size() > 1 && q_.back() == 0) q_.pop_back();
  }

  std::vector<count_type> q_{1};
};

}  // namespace poolbalance
