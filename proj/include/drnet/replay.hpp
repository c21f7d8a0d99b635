#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "drnet/rng.hpp"
#include "drnet/sim.hpp"

namespace drnet::replay {

struct Transition {
  sim::OccupancyState state;
  int action = 0;
  double reward = 0.0;
  sim::OccupancyState next_state;
  bool terminal = false;
};

// Complete binary tree of partial sums over leaf priorities; supports O(log n)
// point updates and prefix-mass descent.
class SumTree {
 public:
  explicit SumTree(size_t capacity);

  size_t capacity() const { return cap_; }
  double total() const { return nodes_[1]; }
  double leaf(size_t i) const { return nodes_[cap_ + i]; }
  void set(size_t i, double value);

  // Leaf index whose cumulative-sum interval contains `mass` in [0, total).
  size_t find_prefix(double mass) const;

  // Brute-force leaf sum; test oracle for the cached partial sums.
  double leaf_sum() const;

 private:
  size_t cap_;  // power of two
  std::vector<double> nodes_;  // 1-based heap layout, nodes_[1] = root
};

struct SampleRef {
  size_t slot = 0;
  uint64_t stamp = 0;  // insertion counter at sampling time
  Transition transition;
};

// Fixed-capacity FIFO buffer with proportional prioritized sampling. Leaves
// store priority^alpha so prefix descent draws with probability
// p^alpha / sum p^alpha.
class ReplayBuffer {
 public:
  ReplayBuffer(size_t capacity, double alpha = 0.6, double priority_floor = 1e-3);

  size_t capacity() const { return capacity_; }
  size_t size() const { return size_; }
  double alpha() const { return alpha_; }
  double priority_floor() const { return floor_; }
  size_t stale_update_count() const { return stale_updates_; }

  const SumTree& tree() const { return tree_; }
  double priority(size_t slot) const { return slots_[slot].priority; }
  const Transition& at(size_t slot) const { return slots_[slot].transition; }

  // Stores at the write cursor (FIFO eviction when full) with priority equal
  // to the running max (1 while empty). Returns the slot index.
  size_t push(Transition t);

  // k stratified draws: the total mass splits into k equal strata with one
  // uniform draw in each. Requires size() >= k.
  std::vector<SampleRef> sample(size_t k, Rng& rng);

  // p <- |td_error| + floor. Entries evicted since sampling are skipped and
  // counted, not fatal.
  void update_priority(const SampleRef& ref, double td_error);

  // Binary snapshot (documented in the README) for resuming runs.
  void save_snapshot(const std::string& path) const;
  static ReplayBuffer load_snapshot(const std::string& path);

 private:
  struct Slot {
    Transition transition;
    uint64_t stamp = 0;
    double priority = 0.0;
  };

  void write_leaf(size_t slot);

  size_t capacity_;
  double alpha_;
  double floor_;
  std::vector<Slot> slots_;
  SumTree tree_;
  size_t cursor_ = 0;
  size_t size_ = 0;
  uint64_t next_stamp_ = 1;
  double max_priority_ = 1.0;
  size_t stale_updates_ = 0;
};

}  // namespace drnet::replay
