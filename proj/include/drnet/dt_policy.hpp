#pragma once

#include <cstdint>

#include "drnet/replay.hpp"
#include "drnet/rng.hpp"
#include "drnet/sim.hpp"

namespace drnet::dt {

// Binary split values feeding the seeding tree.
struct DtObservation {
  bool vehicle_ahead = false;       // b0: leader inside the sensing window
  bool fast_or_following = false;   // b1: high speed, or car-following gap
  bool left_lane_empty = false;     // b2: no vehicle within +/- d_des to the left
  bool right_lane_empty = false;    // b3: same to the right
};

inline constexpr double kDefaultHighSpeedFrac = 0.8;

DtObservation extract_dt_observation(const sim::Env& env,
                                     double high_speed_frac = kDefaultHighSpeedFrac);

// Deterministic tree over {stay, left, right}: no leader -> stay; not fast or
// following -> stay; left empty -> left (preferred); right empty -> right;
// boxed in -> stay.
int dt_decide(const DtObservation& obs);

// Fills the buffer with transitions generated by dt_decide, re-creating the
// environment with a fresh derived seed whenever an episode ends. Returns the
// number of transitions stored.
size_t seed_buffer(const sim::EnvConfig& env_cfg, replay::ReplayBuffer& buffer, size_t count,
                   Rng& seed_rng, double high_speed_frac = kDefaultHighSpeedFrac);

}  // namespace drnet::dt
