#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "drnet/rng.hpp"
#include "drnet/tensor.hpp"

namespace drnet::sim {

// Tactical action set.
enum Action : int {
  kStay = 0,        // keep lane, keep velocity
  kLeft = 1,        // change lanes to the left
  kRight = 2,       // change lanes to the right
  kAccelerate = 3,  // velocity + speed_step
  kDecelerate = 4,  // velocity - speed_step
};
inline constexpr int kActionCount = 5;

enum class DrivingStyle : int { cautious = 0, normal = 1, aggressive = 2 };

const char* style_name(DrivingStyle s);
DrivingStyle style_from_name(const std::string& name);

inline constexpr double kVehicleLength = 6.0;  // m
inline constexpr double kVehicleWidth = 3.0;   // m
inline constexpr double kTimeslotSeconds = 1.0;
inline constexpr double kKmhToMps = 1.0 / 3.6;

// Behavior profile of rule-driven participants.
struct StyleProfile {
  double follow_gap_m;    // decelerate when the bumper gap falls below this
  double anticipation_s;  // extra braking horizon against the closing speed
  double lane_change_prob;
  double target_v_lo, target_v_hi;  // cruise target drawn at spawn
};
const StyleProfile& style_profile(DrivingStyle s);

// Desired lane-change gap of the ego profile.
double ego_desired_gap(DrivingStyle s);

struct EnvConfig {
  int lanes = 3;
  std::vector<double> lane_densities = {0.1, 0.3, 0.5};  // index 0 = leftmost
  // Vehicles per lane; unset derives round(density * road_length / 30) per
  // lane (one sensing-window length per density unit). 0 means empty traffic.
  std::optional<int> participant_count;
  double episode_length_m = 8193.0;
  double sensing_range = 1.0;  // U: meters per grid cell
  double ego_v_min = 10.0, ego_v_max = 80.0;          // km/h
  double participant_v_min = 20.0, participant_v_max = 60.0;
  double desired_speed = 75.0;  // v_des
  double beta_freq = 0.7;       // efficiency divisor on consecutive lane changes
  DrivingStyle ego_style = DrivingStyle::normal;
  std::optional<double> desired_gap_m;  // overrides the ego style profile
  double speed_step = 5.0;              // delta-v of accelerate/decelerate
  double lambda_collision = 10.0;
  std::optional<double> lambda_distance;    // unset: 1 / max|d - d_des|
  std::optional<double> lambda_efficiency;  // unset: 1 / max|v - v_des|
  bool style_layer = false;
  uint64_t rng_seed = 0;

  double desired_gap() const;
  double lambda_d() const;
  double lambda_e() const;
  // Largest bumper gap representable in the forward sensing window.
  double max_sensed_gap() const;
  int participants_in_lane(int lane) const;
  int total_participants() const;
  void validate() const;  // throws std::invalid_argument
};

struct VehicleState {
  int id = 0;
  int lane = 0;       // 0-based from leftmost
  double position = 0.0;  // rear bumper, meters along the ring
  double velocity = 0.0;  // km/h
  DrivingStyle style = DrivingStyle::normal;
  bool is_ego = false;
};

// Stacked grid observation: three binary layers at t-2, t-1, t plus an
// optional style layer (codes 0..3 = empty/cautious/normal/aggressive,
// scaled to 0/0.25/0.5/0.75 in the tensor).
struct OccupancyState {
  static constexpr int kRows = 30;  // longitudinal, row 0 = rear edge
  static constexpr int kCols = 15;  // lateral, 5 cells per lane, 3 lanes

  std::array<std::vector<uint8_t>, 3> layers;
  std::vector<uint8_t> style;  // empty when the style layer is disabled
  int ego_row0 = 10;
  int ego_row_span = 6;

  bool operator==(const OccupancyState&) const = default;

  static size_t idx(int r, int c) { return static_cast<size_t>(r) * kCols + c; }
  nn::Tensor to_tensor() const;
  int input_layer_count() const { return style.empty() ? 3 : 4; }
};

std::string render_text(const OccupancyState& s, int layer = 2);
std::string render_style_text(const OccupancyState& s);

// Stamps one vehicle block into a rows*cols occupancy layer. rel_pos is the
// vehicle rear relative to the ego rear; lane_offset in {-1, 0, +1}; cell is
// the cell length in meters (the sensing-range multiplier). The window spans
// [-10*cell, +20*cell] around the ego rear, inclusive at the front edge.
// The same cells go into *style_layer when given.
void mark_block(std::vector<uint8_t>& occ, double rel_pos, int lane_offset, double cell,
                std::vector<uint8_t>* style_layer = nullptr, uint8_t style_code = 0);

struct RewardParts {
  double collision = 0.0;
  double distance = 0.0;
  double efficiency = 0.0;
  double total() const { return collision + distance + efficiency; }
};

struct StepOutcome {
  OccupancyState next_state;
  double reward = 0.0;
  RewardParts parts;
  bool collision = false;       // c_t
  bool lane_change = false;     // l_t
  bool terminal = false;
  double distance_traveled = 0.0;  // cumulative, meters
  double ego_velocity = 0.0;
  bool lane_violation = false;  // masked-out lane change reached the env
};

// Reward terms (Eqs. of the reward model). All weights are positive.
double reward_collision(bool collided, double lambda_c);
double reward_distance(double d, double d_des, bool lane_change, double lambda_d);
double reward_efficiency(double v, double v_des, double lambda_e, bool consecutive_lane_change,
                         double beta_freq);

struct Leader {
  int vehicle_id;
  double gap;    // ego front bumper to leader rear bumper, meters
  double speed;  // km/h
};

// Snapshot the mask and rule policies consume; avoids exposing env internals.
struct EgoView {
  int lane = 0;
  int lanes = 3;
  double velocity = 0.0;
  double v_min = 0.0, v_max = 0.0;
  std::optional<Leader> leader;
  bool left_gap_occupied = true;   // within +/- gap window; true when no lane
  bool right_gap_occupied = true;
};

// Discrete-time ring-road environment. Owns all mutable state; instances are
// independent and movable between threads.
class Env {
 public:
  explicit Env(const EnvConfig& cfg);

  const EnvConfig& config() const { return cfg_; }
  bool terminal() const { return terminal_; }
  uint64_t steps() const { return step_count_; }
  double distance_traveled() const { return distance_; }

  int ego_lane() const { return ego_.lane; }
  double ego_velocity() const { return ego_.velocity; }
  const VehicleState& ego() const { return ego_; }
  const std::vector<VehicleState>& participants() const { return participants_; }

  // Leader in the ego lane whose rear bumper is inside the forward sensing
  // window (relative position <= 20*U from the ego rear anchor).
  std::optional<Leader> leader() const;

  // Any vehicle block within +/- within_m of the ego block in lane ego+dir.
  bool adjacent_occupied(int dir, double within_m) const;

  EgoView ego_view(double gap_window_m) const;

  OccupancyState state() const;
  StepOutcome step(int action);

  // Mean participant velocity; used by the style-feature extractor.
  double traffic_mean_velocity() const;
  std::optional<double> participant_leader_gap(int participant_index) const;

  // Ground-truth styles back the style layer unless the harness installs
  // classifier output here (vehicle id -> style code 1..3, 0 = unknown).
  void set_style_source(std::vector<int> codes_by_vehicle_id);

  std::string dump_grid() const { return render_text(state()); }

 private:
  double wrap(double x) const;
  double rel_to_ego(double x) const { return rel(x, ego_.position); }
  double rel(double a, double b) const;  // signed ring distance in (-road/2, road/2]
  void spawn(Rng& rng);
  void render_frame();
  void participant_lane_changes();
  bool gap_free(size_t index, int target_lane) const;

  EnvConfig cfg_;
  Rng rng_;
  double road_length_;
  VehicleState ego_;
  std::vector<VehicleState> participants_;
  std::vector<double> target_v_;     // cruise target per participant
  std::vector<int> style_override_;  // by vehicle id; empty = ground truth

  double distance_ = 0.0;
  uint64_t step_count_ = 0;
  bool terminal_ = false;
  bool prev_lane_change_ = false;

  struct Frame {
    std::vector<uint8_t> occ;
    std::vector<uint8_t> style;
  };
  std::deque<Frame> history_;
};

}  // namespace drnet::sim
