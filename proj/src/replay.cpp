#include "drnet/replay.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace drnet::replay {

namespace {

size_t next_pow2(size_t n) {
  size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace

SumTree::SumTree(size_t capacity) : cap_(next_pow2(std::max<size_t>(capacity, 1))) {
  nodes_.assign(2 * cap_, 0.0);
}

void SumTree::set(size_t i, double value) {
  if (i >= cap_) throw std::out_of_range("sumtree: leaf index out of range");
  size_t n = cap_ + i;
  nodes_[n] = value;
  for (n >>= 1; n >= 1; n >>= 1) nodes_[n] = nodes_[2 * n] + nodes_[2 * n + 1];
}

size_t SumTree::find_prefix(double mass) const {
  size_t n = 1;
  while (n < cap_) {
    double left = nodes_[2 * n];
    if (mass < left) {
      n = 2 * n;
    } else {
      mass -= left;
      n = 2 * n + 1;
    }
  }
  return n - cap_;
}

double SumTree::leaf_sum() const {
  double s = 0.0;
  for (size_t i = 0; i < cap_; ++i) s += nodes_[cap_ + i];
  return s;
}

ReplayBuffer::ReplayBuffer(size_t capacity, double alpha, double priority_floor)
    : capacity_(capacity), alpha_(alpha), floor_(priority_floor), tree_(capacity) {
  if (capacity_ == 0) throw std::invalid_argument("replay: capacity must be positive");
  if (floor_ <= 0.0) throw std::invalid_argument("replay: priority floor must be positive");
  slots_.resize(capacity_);
}

void ReplayBuffer::write_leaf(size_t slot) {
  tree_.set(slot, std::pow(slots_[slot].priority, alpha_));
}

size_t ReplayBuffer::push(Transition t) {
  size_t slot = cursor_;
  slots_[slot].transition = std::move(t);
  slots_[slot].stamp = next_stamp_++;
  slots_[slot].priority = max_priority_;
  write_leaf(slot);
  cursor_ = (cursor_ + 1) % capacity_;
  if (size_ < capacity_) ++size_;
  return slot;
}

std::vector<SampleRef> ReplayBuffer::sample(size_t k, Rng& rng) {
  if (size_ < k) throw std::logic_error("replay: fewer stored transitions than requested");
  std::vector<SampleRef> out;
  out.reserve(k);
  double total = tree_.total();
  if (total <= 0.0) throw std::logic_error("replay: zero total priority mass");
  double stratum = total / static_cast<double>(k);
  for (size_t j = 0; j < k; ++j) {
    double mass = (static_cast<double>(j) + rng.uniform()) * stratum;
    if (mass >= total) mass = std::nexttoward(total, 0.0);
    size_t slot = tree_.find_prefix(mass);
    if (slot >= capacity_ || slots_[slot].stamp == 0) {
      // numeric edge: mass landed on an empty leaf; fall back to the last live
      slot = (cursor_ + capacity_ - 1) % capacity_;
    }
    out.push_back(SampleRef{slot, slots_[slot].stamp, slots_[slot].transition});
  }
  return out;
}

void ReplayBuffer::update_priority(const SampleRef& ref, double td_error) {
  if (ref.slot >= capacity_ || slots_[ref.slot].stamp != ref.stamp) {
    ++stale_updates_;  // evicted since sampling
    return;
  }
  double p = std::fabs(td_error) + floor_;
  slots_[ref.slot].priority = p;
  if (p > max_priority_) max_priority_ = p;
  write_leaf(ref.slot);
}

namespace {

void put_u64(std::ofstream& f, uint64_t v) { f.write(reinterpret_cast<const char*>(&v), 8); }
void put_f64(std::ofstream& f, double v) { f.write(reinterpret_cast<const char*>(&v), 8); }
uint64_t get_u64(std::ifstream& f) {
  uint64_t v = 0;
  f.read(reinterpret_cast<char*>(&v), 8);
  return v;
}
double get_f64(std::ifstream& f) {
  double v = 0;
  f.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

void put_state(std::ofstream& f, const sim::OccupancyState& s) {
  put_u64(f, s.style.empty() ? 3 : 4);
  for (const auto& layer : s.layers)
    f.write(reinterpret_cast<const char*>(layer.data()), static_cast<std::streamsize>(layer.size()));
  if (!s.style.empty())
    f.write(reinterpret_cast<const char*>(s.style.data()), static_cast<std::streamsize>(s.style.size()));
}

sim::OccupancyState get_state(std::ifstream& f) {
  sim::OccupancyState s;
  uint64_t layers = get_u64(f);
  size_t cells = sim::OccupancyState::kRows * sim::OccupancyState::kCols;
  for (auto& layer : s.layers) {
    layer.resize(cells);
    f.read(reinterpret_cast<char*>(layer.data()), static_cast<std::streamsize>(cells));
  }
  if (layers == 4) {
    s.style.resize(cells);
    f.read(reinterpret_cast<char*>(s.style.data()), static_cast<std::streamsize>(cells));
  }
  return s;
}

constexpr uint64_t kSnapshotMagic = 0x44524e4554425546ull;  // "DRNETBUF"

}  // namespace

void ReplayBuffer::save_snapshot(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("replay: cannot write snapshot " + path);
  put_u64(f, kSnapshotMagic);
  put_u64(f, 1);  // version
  put_u64(f, capacity_);
  put_f64(f, alpha_);
  put_f64(f, floor_);
  put_u64(f, size_);
  put_u64(f, cursor_);
  put_u64(f, next_stamp_);
  put_f64(f, max_priority_);
  // live slots in ring order starting at the oldest
  size_t start = size_ < capacity_ ? 0 : cursor_;
  for (size_t i = 0; i < size_; ++i) {
    const Slot& s = slots_[(start + i) % capacity_];
    put_u64(f, s.stamp);
    put_f64(f, s.priority);
    put_u64(f, static_cast<uint64_t>(s.transition.action));
    put_f64(f, s.transition.reward);
    put_u64(f, s.transition.terminal ? 1 : 0);
    put_state(f, s.transition.state);
    put_state(f, s.transition.next_state);
  }
  if (!f) throw std::runtime_error("replay: snapshot write failed " + path);
}

ReplayBuffer ReplayBuffer::load_snapshot(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("replay: cannot read snapshot " + path);
  if (get_u64(f) != kSnapshotMagic) throw std::runtime_error("replay: bad snapshot magic");
  if (get_u64(f) != 1) throw std::runtime_error("replay: unsupported snapshot version");
  uint64_t capacity = get_u64(f);
  double alpha = get_f64(f);
  double floor = get_f64(f);
  ReplayBuffer buf(capacity, alpha, floor);
  uint64_t size = get_u64(f);
  get_u64(f);  // cursor, reconstructed by re-pushing
  uint64_t next_stamp = get_u64(f);
  double max_priority = get_f64(f);
  for (uint64_t i = 0; i < size; ++i) {
    Slot s;
    s.stamp = get_u64(f);
    s.priority = get_f64(f);
    Transition t;
    t.action = static_cast<int>(get_u64(f));
    t.reward = get_f64(f);
    t.terminal = get_u64(f) != 0;
    t.state = get_state(f);
    t.next_state = get_state(f);
    size_t slot = buf.push(std::move(t));
    buf.slots_[slot].stamp = s.stamp;
    buf.slots_[slot].priority = s.priority;
    buf.write_leaf(slot);
  }
  buf.next_stamp_ = next_stamp;
  buf.max_priority_ = max_priority;
  if (!f) throw std::runtime_error("replay: snapshot truncated " + path);
  return buf;
}

}  // namespace drnet::replay
