#include "drnet/sim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace drnet::sim {

namespace {

// aggressive drivers accept short gaps, cruise fast and change lanes often;
// cautious ones keep large margins, never change lanes, and cruise slower.
constexpr StyleProfile kProfiles[3] = {
    /* cautious   */ {25.0, 3.0, 0.000, 20.0, 34.0},
    /* normal     */ {15.0, 2.0, 0.005, 36.0, 48.0},
    /* aggressive */ {8.0, 1.0, 0.030, 50.0, 60.0},
};

constexpr double kEgoDesiredGap[3] = {25.0, 18.0, 10.0};  // cautious/normal/aggressive

constexpr double kMinSpawnSpacing = 8.0;   // m between spawned rear bumpers in a lane
constexpr double kFollowerMargin = 0.3;    // m kept behind a leader when clamped
constexpr double kLaneChangeMargin = 12.0;  // m clear front and back for participants

}  // namespace

const char* style_name(DrivingStyle s) {
  switch (s) {
    case DrivingStyle::cautious: return "cautious";
    case DrivingStyle::normal: return "normal";
    case DrivingStyle::aggressive: return "aggressive";
  }
  return "normal";
}

DrivingStyle style_from_name(const std::string& name) {
  if (name == "cautious" || name == "conservative") return DrivingStyle::cautious;
  if (name == "normal") return DrivingStyle::normal;
  if (name == "aggressive") return DrivingStyle::aggressive;
  throw std::invalid_argument("unknown driving style: " + name);
}

const StyleProfile& style_profile(DrivingStyle s) { return kProfiles[static_cast<int>(s)]; }

double ego_desired_gap(DrivingStyle s) { return kEgoDesiredGap[static_cast<int>(s)]; }

double EnvConfig::desired_gap() const {
  return desired_gap_m ? *desired_gap_m : ego_desired_gap(ego_style);
}

double EnvConfig::max_sensed_gap() const {
  return std::max(0.0, 20.0 * sensing_range - kVehicleLength);
}

double EnvConfig::lambda_d() const {
  if (lambda_distance) return *lambda_distance;
  // Normalizes lambda_d * |d - d_des| to [0, 1] over gaps the sensing window
  // can produce (plus the no-leader case d = d_des).
  double d_des = desired_gap();
  return 1.0 / std::max(d_des, max_sensed_gap() - d_des);
}

double EnvConfig::lambda_e() const {
  if (lambda_efficiency) return *lambda_efficiency;
  return 1.0 / std::max(desired_speed - ego_v_min, ego_v_max - desired_speed);
}

int EnvConfig::participants_in_lane(int lane) const {
  double density = lane_densities[lane];
  if (participant_count) {
    // Distribute an explicit total proportionally to the densities.
    double total_density = 0.0;
    for (double d : lane_densities) total_density += d;
    if (total_density <= 0.0) return 0;
    int total = *participant_count;
    // floor shares, then largest remainders take the leftover
    std::vector<double> share(lanes);
    std::vector<int> n(lanes);
    int assigned = 0;
    for (int l = 0; l < lanes; ++l) {
      share[l] = total * lane_densities[l] / total_density;
      n[l] = static_cast<int>(share[l]);
      assigned += n[l];
    }
    std::vector<int> order(lanes);
    for (int l = 0; l < lanes; ++l) order[l] = l;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return share[a] - n[a] > share[b] - n[b];
    });
    for (int i = 0; assigned < total; ++i, ++assigned) n[order[i % lanes]] += 1;
    return n[lane];
  }
  return static_cast<int>(std::lround(density * episode_length_m / 30.0));
}

int EnvConfig::total_participants() const {
  int total = 0;
  for (int l = 0; l < lanes; ++l) total += participants_in_lane(l);
  return total;
}

void EnvConfig::validate() const {
  if (lanes < 1) throw std::invalid_argument("env: lanes must be >= 1");
  if (static_cast<int>(lane_densities.size()) != lanes)
    throw std::invalid_argument("env: lane_densities must list one density per lane");
  for (double d : lane_densities)
    if (d < 0.0 || d > 1.0) throw std::invalid_argument("env: densities must be in [0,1]");
  if (!(ego_v_min < desired_speed && desired_speed <= ego_v_max))
    throw std::invalid_argument("env: requires v_min < v_des <= v_max");
  if (!(beta_freq > 0.0 && beta_freq <= 1.0))
    throw std::invalid_argument("env: beta_freq must be in (0,1]");
  if (lambda_collision <= 0.0 || lambda_d() <= 0.0 || lambda_e() <= 0.0)
    throw std::invalid_argument("env: reward weights must be positive");
  if (episode_length_m <= 60.0)
    throw std::invalid_argument("env: episode_length_m too short");
  if (sensing_range <= 0.0) throw std::invalid_argument("env: sensing_range must be positive");
  if (speed_step <= 0.0) throw std::invalid_argument("env: speed_step must be positive");
  if (participant_count && *participant_count < 0)
    throw std::invalid_argument("env: participant_count must be >= 0");
}

double reward_collision(bool collided, double lambda_c) {
  return collided ? -lambda_c : 0.0;
}

double reward_distance(double d, double d_des, bool lane_change, double lambda_d) {
  if (!lane_change) return 0.0;
  return -lambda_d * std::fabs(d - d_des);
}

double reward_efficiency(double v, double v_des, double lambda_e, bool consecutive_lane_change,
                         double beta_freq) {
  double beta = consecutive_lane_change ? beta_freq : 1.0;
  return -lambda_e * std::fabs(v - v_des) / beta;
}

nn::Tensor OccupancyState::to_tensor() const {
  nn::Tensor t(input_layer_count(), kRows, kCols);
  for (int l = 0; l < 3; ++l)
    for (int r = 0; r < kRows; ++r)
      for (int c = 0; c < kCols; ++c) t.at(l, r, c) = layers[l][idx(r, c)];
  if (!style.empty())
    for (int r = 0; r < kRows; ++r)
      for (int c = 0; c < kCols; ++c) t.at(3, r, c) = 0.25 * style[idx(r, c)];
  return t;
}

std::string render_text(const OccupancyState& s, int layer) {
  std::string out;
  out.reserve((OccupancyState::kCols + 1) * OccupancyState::kRows);
  for (int r = OccupancyState::kRows - 1; r >= 0; --r) {  // front edge on top
    for (int c = 0; c < OccupancyState::kCols; ++c) {
      bool ego_cell = r >= s.ego_row0 && r < s.ego_row0 + s.ego_row_span && c >= 6 && c <= 8;
      uint8_t occ = s.layers[layer][OccupancyState::idx(r, c)];
      out += ego_cell && occ ? 'E' : (occ ? '#' : '.');
    }
    out += '\n';
  }
  return out;
}

std::string render_style_text(const OccupancyState& s) {
  static const char codes[4] = {'.', 'c', 'n', 'a'};
  std::string out;
  if (s.style.empty()) return out;
  for (int r = OccupancyState::kRows - 1; r >= 0; --r) {
    for (int c = 0; c < OccupancyState::kCols; ++c)
      out += codes[s.style[OccupancyState::idx(r, c)] & 3];
    out += '\n';
  }
  return out;
}

Env::Env(const EnvConfig& cfg) : cfg_(cfg), rng_(cfg.rng_seed), road_length_(cfg.episode_length_m) {
  cfg_.validate();
  spawn(rng_);
  render_frame();
  // replicate the initial frame into the full history
  while (history_.size() < 3) history_.push_back(history_.front());
}

double Env::wrap(double x) const {
  x = std::fmod(x, road_length_);
  return x < 0.0 ? x + road_length_ : x;
}

double Env::rel(double a, double b) const {
  double d = wrap(a - b);
  return d > road_length_ * 0.5 ? d - road_length_ : d;
}

void Env::spawn(Rng& rng) {
  ego_.id = 0;
  ego_.lane = static_cast<int>(rng.uniform_index(cfg_.lanes));
  ego_.position = 0.0;
  ego_.velocity = cfg_.ego_v_min;
  ego_.is_ego = true;

  participants_.clear();
  target_v_.clear();
  int next_id = 1;
  for (int lane = 0; lane < cfg_.lanes; ++lane) {
    int count = cfg_.participants_in_lane(lane);
    std::vector<double> placed;
    for (int i = 0; i < count; ++i) {
      bool ok = false;
      for (int attempt = 0; attempt < 2000 && !ok; ++attempt) {
        double x = rng.uniform(0.0, road_length_);
        ok = true;
        if (lane == ego_.lane &&
            rel(x, ego_.position) > -(kVehicleLength + 2.0) &&
            rel(x, ego_.position) < kVehicleLength + 2.0)
          ok = false;  // never spawn touching the ego block
        for (double other : placed) {
          if (std::fabs(rel(x, other)) < kMinSpawnSpacing) {
            ok = false;
            break;
          }
        }
        if (ok) {
          placed.push_back(x);
          VehicleState p;
          p.id = next_id++;
          p.lane = lane;
          p.position = x;
          p.style = static_cast<DrivingStyle>(rng.uniform_index(3));
          const StyleProfile& prof = style_profile(p.style);
          double target = rng.uniform(prof.target_v_lo, prof.target_v_hi);
          target = std::clamp(target, cfg_.participant_v_min, cfg_.participant_v_max);
          p.velocity = target;
          participants_.push_back(p);
          target_v_.push_back(target);
        }
      }
      if (!ok)
        throw std::invalid_argument(
            "env: cannot place requested participants without overlap in lane " +
            std::to_string(lane));
    }
  }
}

std::optional<Leader> Env::leader() const {
  std::optional<Leader> best;
  double sense = 20.0 * cfg_.sensing_range;
  for (const auto& p : participants_) {
    if (p.lane != ego_.lane) continue;
    double r = rel_to_ego(p.position);
    if (r <= 0.0 || r > sense) continue;  // rear bumper inside the sensed window
    if (!best || r - kVehicleLength < best->gap)
      best = Leader{p.id, r - kVehicleLength, p.velocity};
  }
  return best;
}

bool Env::adjacent_occupied(int dir, double within_m) const {
  int lane = ego_.lane + dir;
  if (lane < 0 || lane >= cfg_.lanes) return true;  // no such lane
  for (const auto& p : participants_) {
    if (p.lane != lane) continue;
    double r = rel_to_ego(p.position);
    if (r + kVehicleLength > -within_m && r < kVehicleLength + within_m) return true;
  }
  return false;
}

EgoView Env::ego_view(double gap_window_m) const {
  EgoView v;
  v.lane = ego_.lane;
  v.lanes = cfg_.lanes;
  v.velocity = ego_.velocity;
  v.v_min = cfg_.ego_v_min;
  v.v_max = cfg_.ego_v_max;
  v.leader = leader();
  v.left_gap_occupied = adjacent_occupied(-1, gap_window_m);
  v.right_gap_occupied = adjacent_occupied(+1, gap_window_m);
  return v;
}

double Env::traffic_mean_velocity() const {
  if (participants_.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& p : participants_) sum += p.velocity;
  return sum / static_cast<double>(participants_.size());
}

std::optional<double> Env::participant_leader_gap(int index) const {
  const auto& me = participants_[index];
  std::optional<double> best;
  for (const auto& p : participants_) {
    if (&p == &me || p.lane != me.lane) continue;
    double r = rel(p.position, me.position);
    if (r <= 0.0) continue;
    double gap = r - kVehicleLength;
    if (!best || gap < *best) best = gap;
  }
  if (ego_.lane == me.lane) {
    double r = rel(ego_.position, me.position);
    if (r > 0.0) {
      double gap = r - kVehicleLength;
      if (!best || gap < *best) best = gap;
    }
  }
  return best;
}

void Env::set_style_source(std::vector<int> codes_by_vehicle_id) {
  style_override_ = std::move(codes_by_vehicle_id);
}

void mark_block(std::vector<uint8_t>& occ, double rel_pos, int lane_offset, double cell,
                std::vector<uint8_t>* style_layer, uint8_t style_code) {
  const double window = 30.0 * cell;
  const int block_rows = std::max(1, static_cast<int>(std::lround(kVehicleLength / cell)));
  double w = rel_pos + 10.0 * cell;  // window coordinates, 0 = rear edge
  if (w > window || w + kVehicleLength <= 0.0) return;
  int r0 = std::min(static_cast<int>(std::floor(w / cell)), OccupancyState::kRows - 1);
  int c0 = 5 * (lane_offset + 1) + 1;  // middle 3 cells of the lane
  for (int r = std::max(0, r0); r < std::min(OccupancyState::kRows, r0 + block_rows); ++r) {
    for (int c = c0; c < c0 + 3; ++c) {
      occ[OccupancyState::idx(r, c)] = 1;
      if (style_layer && style_code > 0)
        (*style_layer)[OccupancyState::idx(r, c)] = style_code;
    }
  }
}

void Env::render_frame() {
  Frame f;
  f.occ.assign(OccupancyState::kRows * OccupancyState::kCols, 0);
  if (cfg_.style_layer) f.style.assign(OccupancyState::kRows * OccupancyState::kCols, 0);

  const double cell = cfg_.sensing_range;
  std::vector<uint8_t>* style = f.style.empty() ? nullptr : &f.style;

  mark_block(f.occ, 0.0, 0, cell);  // ego block, fixed anchor
  for (const auto& p : participants_) {
    int off = p.lane - ego_.lane;
    if (off < -1 || off > 1) continue;
    int code = static_cast<int>(p.style) + 1;
    if (!style_override_.empty() && p.id < static_cast<int>(style_override_.size()))
      code = style_override_[p.id];
    mark_block(f.occ, rel_to_ego(p.position), off, cell, style, static_cast<uint8_t>(code));
  }

  history_.push_back(std::move(f));
  while (history_.size() > 3) history_.pop_front();
}

OccupancyState Env::state() const {
  OccupancyState s;
  for (int i = 0; i < 3; ++i) s.layers[i] = history_[i].occ;
  if (cfg_.style_layer) s.style = history_[2].style;
  s.ego_row0 = 10;  // anchor: 10*U meters from the rear edge = 10 cells
  s.ego_row_span =
      std::max(1, static_cast<int>(std::lround(kVehicleLength / cfg_.sensing_range)));
  return s;
}

void Env::participant_lane_changes() {
  for (size_t i = 0; i < participants_.size(); ++i) {
    VehicleState& p = participants_[i];
    const StyleProfile& prof = style_profile(p.style);
    if (prof.lane_change_prob <= 0.0) continue;
    if (!rng_.bernoulli(prof.lane_change_prob)) continue;
    int dir = rng_.bernoulli(0.5) ? -1 : 1;
    for (int attempt = 0; attempt < 2; ++attempt, dir = -dir) {
      int target = p.lane + dir;
      if (target < 0 || target >= cfg_.lanes) continue;
      if (gap_free(i, target)) {
        p.lane = target;
        break;
      }
    }
  }
}

bool Env::gap_free(size_t index, int target_lane) const {
  const VehicleState& me = participants_[index];
  // margins stretch with the closing speed so nobody merges right in front
  // of a much faster vehicle (or onto the tail of a much slower one)
  auto blocked_by = [&](double x, double v) {
    double r = rel(x, me.position);
    double behind_margin =
        kLaneChangeMargin + 3.0 * std::max(0.0, v - me.velocity) * kKmhToMps;
    double ahead_margin =
        kLaneChangeMargin + 3.0 * std::max(0.0, me.velocity - v) * kKmhToMps;
    return r > -(kVehicleLength + behind_margin) && r < kVehicleLength + ahead_margin;
  };
  for (size_t j = 0; j < participants_.size(); ++j)
    if (j != index && participants_[j].lane == target_lane &&
        blocked_by(participants_[j].position, participants_[j].velocity))
      return false;
  if (ego_.lane == target_lane && blocked_by(ego_.position, ego_.velocity)) return false;
  return true;
}

StepOutcome Env::step(int action) {
  if (terminal_) throw std::logic_error("env: step() on a terminal episode");
  if (action < 0 || action >= kActionCount)
    throw std::invalid_argument("env: action out of range");

  StepOutcome out;
  int exec = action;
  if ((exec == kLeft && ego_.lane == 0) || (exec == kRight && ego_.lane == cfg_.lanes - 1)) {
    exec = kStay;
    out.lane_violation = true;
  }

  // Phase 1: ego decision, instantaneous within the timeslot.
  if (exec == kLeft) ego_.lane -= 1;
  if (exec == kRight) ego_.lane += 1;
  if (exec == kAccelerate) ego_.velocity = std::min(ego_.velocity + cfg_.speed_step, cfg_.ego_v_max);
  if (exec == kDecelerate) ego_.velocity = std::max(ego_.velocity - cfg_.speed_step, cfg_.ego_v_min);
  const bool lane_change = exec == kLeft || exec == kRight;

  const double ego_x0 = ego_.position;
  const double ego_dx = ego_.velocity * kKmhToMps * kTimeslotSeconds;

  // Phase 2: participant lane changes, then longitudinal motion.
  participant_lane_changes();

  std::vector<double> x0(participants_.size());
  std::vector<double> dx(participants_.size(), 0.0);
  for (size_t i = 0; i < participants_.size(); ++i) x0[i] = participants_[i].position;

  ego_.position = wrap(ego_.position + ego_dx);

  // Per-lane, front-to-back: speed decision from pre-move gaps, position
  // clamped behind the leader's post-move rear.
  std::vector<size_t> order(participants_.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (participants_[a].lane != participants_[b].lane)
      return participants_[a].lane < participants_[b].lane;
    return x0[a] > x0[b];
  });

  for (size_t oi = 0; oi < order.size(); ++oi) {
    size_t i = order[oi];
    VehicleState& p = participants_[i];
    const StyleProfile& prof = style_profile(p.style);

    // pre-move leader: previous entry in this lane's descending-x order, or
    // the lane's rearmost vehicle wrapped around; the ego also counts.
    double lead_rel = road_length_;  // gap to leader rear, pre-move, rear-to-rear
    double lead_new_pos = 0.0;
    double lead_speed = 0.0;
    bool has_leader = false;
    size_t lane_begin = oi;
    while (lane_begin > 0 && participants_[order[lane_begin - 1]].lane == p.lane) --lane_begin;
    size_t lane_end = oi;
    while (lane_end + 1 < order.size() && participants_[order[lane_end + 1]].lane == p.lane)
      ++lane_end;
    if (oi > lane_begin) {
      size_t j = order[oi - 1];
      lead_rel = wrap(x0[j] - x0[i]);
      lead_new_pos = participants_[j].position;  // already moved
      lead_speed = participants_[j].velocity;
      has_leader = true;
    } else if (lane_end > oi) {
      size_t j = order[lane_end];  // wrap leader: rearmost, not yet moved
      lead_rel = wrap(x0[j] - x0[i]);
      lead_new_pos = x0[j];
      lead_speed = participants_[j].velocity;
      has_leader = true;
    }
    if (ego_.lane == p.lane) {
      double r = wrap(ego_x0 - x0[i]);
      if (r > 0.0 && r < lead_rel) {
        lead_rel = r;
        lead_new_pos = ego_.position;
        lead_speed = ego_.velocity;
        has_leader = true;
      }
    }

    // brake inside the style gap, or when closing would breach it within the
    // style's anticipation horizon; keeps each style's accepted gap
    // observable instead of collapsing every approach onto the hard clamp
    double gap0 = lead_rel - kVehicleLength;
    double closing = std::max(0.0, (p.velocity - lead_speed) * kKmhToMps);
    if (has_leader && gap0 < prof.follow_gap_m + prof.anticipation_s * closing) {
      p.velocity = std::max(cfg_.participant_v_min, p.velocity - cfg_.speed_step);
    } else if (p.velocity < target_v_[i]) {
      p.velocity = std::min(target_v_[i], p.velocity + cfg_.speed_step);
    }

    double move = p.velocity * kKmhToMps * kTimeslotSeconds;
    if (has_leader) {
      double allowed = lead_rel + rel(lead_new_pos, wrap(x0[i] + lead_rel)) -
                       kVehicleLength - kFollowerMargin;
      move = std::min(move, std::max(0.0, allowed));
    }
    dx[i] = move;
    p.position = wrap(x0[i] + move);
  }

  // Phase 3: collision sweep in the ego lane over the whole timeslot.
  bool collided = false;
  for (size_t i = 0; i < participants_.size() && !collided; ++i) {
    if (participants_[i].lane != ego_.lane) continue;
    double rel0 = rel(x0[i], ego_x0);
    double rel1 = rel0 + (dx[i] - ego_dx);
    double min_abs;
    if ((rel0 <= 0.0) != (rel1 <= 0.0))
      min_abs = 0.0;  // passed through
    else
      min_abs = std::min(std::fabs(rel0), std::fabs(rel1));
    if (min_abs < kVehicleLength) collided = true;
  }

  // Phase 4: rewards.
  double d = cfg_.desired_gap();
  if (auto ld = leader()) d = std::max(0.0, ld->gap);
  out.parts.collision = reward_collision(collided, cfg_.lambda_collision);
  out.parts.distance = reward_distance(d, cfg_.desired_gap(), lane_change, cfg_.lambda_d());
  out.parts.efficiency = reward_efficiency(ego_.velocity, cfg_.desired_speed, cfg_.lambda_e(),
                                           lane_change && prev_lane_change_, cfg_.beta_freq);
  out.reward = out.parts.total();

  distance_ += ego_dx;
  step_count_ += 1;
  prev_lane_change_ = lane_change;
  terminal_ = collided || distance_ >= cfg_.episode_length_m;

  render_frame();

  out.collision = collided;
  out.lane_change = lane_change;
  out.terminal = terminal_;
  out.distance_traveled = distance_;
  out.ego_velocity = ego_.velocity;
  out.next_state = state();
  return out;
}

}  // namespace drnet::sim
