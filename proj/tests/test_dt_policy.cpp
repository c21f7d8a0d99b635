#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "drnet/dt_policy.hpp"

using namespace drnet;
using dt::DtObservation;

namespace {

sim::EnvConfig traffic_cfg(uint64_t seed) {
  sim::EnvConfig cfg;
  cfg.episode_length_m = 800.0;
  cfg.lane_densities = {0.2, 0.4, 0.6};
  cfg.rng_seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("tree shape: the four decided splits") {
  // boxed-in cases
  CHECK(dt::dt_decide({false, false, true, true}) == sim::kStay);
  CHECK(dt::dt_decide({false, true, true, true}) == sim::kStay);   // no leader: stay
  CHECK(dt::dt_decide({true, false, true, true}) == sim::kStay);   // slow cruise: stay
  CHECK(dt::dt_decide({true, true, false, false}) == sim::kStay);  // boxed in
  // left preference when both sides are open
  CHECK(dt::dt_decide({true, true, true, true}) == sim::kLeft);
  CHECK(dt::dt_decide({true, true, true, false}) == sim::kLeft);
  CHECK(dt::dt_decide({true, true, false, true}) == sim::kRight);
}

TEST_CASE("dt_decide is a pure function over all observations") {
  for (int bits = 0; bits < 16; ++bits) {
    DtObservation obs{(bits & 1) != 0, (bits & 2) != 0, (bits & 4) != 0, (bits & 8) != 0};
    int first = dt::dt_decide(obs);
    for (int rep = 0; rep < 3; ++rep) CHECK(dt::dt_decide(obs) == first);
    CHECK(first >= sim::kStay);
    CHECK(first <= sim::kRight);
  }
}

TEST_CASE("empty road: no leader, side lanes empty where they exist") {
  sim::EnvConfig cfg;
  cfg.participant_count = 0;
  cfg.episode_length_m = 600.0;
  cfg.rng_seed = 9;
  sim::Env env(cfg);
  DtObservation obs = dt::extract_dt_observation(env);
  CHECK_FALSE(obs.vehicle_ahead);
  CHECK(obs.left_lane_empty == (env.ego_lane() > 0));
  CHECK(obs.right_lane_empty == (env.ego_lane() < cfg.lanes - 1));
}

TEST_CASE("leftmost lane: left is never empty") {
  sim::EnvConfig cfg;
  cfg.participant_count = 0;
  cfg.episode_length_m = 600.0;
  cfg.rng_seed = 10;
  sim::Env env(cfg);
  while (env.ego_lane() > 0) env.step(sim::kLeft);
  DtObservation obs = dt::extract_dt_observation(env);
  CHECK_FALSE(obs.left_lane_empty);
  CHECK(obs.right_lane_empty);
}

TEST_CASE("a close leader sets both the ahead and car-following bits") {
  // drive hard in dense traffic until the bumper gap closes below d_des
  sim::Env env(traffic_cfg(31));
  bool found = false;
  for (int t = 0; t < 600 && !env.terminal(); ++t) {
    auto leader = env.leader();
    if (leader && leader->gap < env.config().desired_gap()) {
      DtObservation obs = dt::extract_dt_observation(env);
      CHECK(obs.vehicle_ahead);
      CHECK(obs.fast_or_following);
      found = true;
      break;
    }
    env.step(sim::kAccelerate);
  }
  REQUIRE(found);
}

TEST_CASE("high speed alone sets the b1 bit") {
  sim::EnvConfig cfg;
  cfg.participant_count = 0;
  cfg.episode_length_m = 5000.0;
  cfg.rng_seed = 11;
  sim::Env env(cfg);
  while (env.ego_velocity() < 0.8 * cfg.ego_v_max) env.step(sim::kAccelerate);
  DtObservation obs = dt::extract_dt_observation(env);
  CHECK_FALSE(obs.vehicle_ahead);
  CHECK(obs.fast_or_following);
}

TEST_CASE("seed_buffer: H=0 leaves the buffer unchanged") {
  replay::ReplayBuffer buf(1024, 0.6, 1e-3);
  Rng rng(1);
  CHECK(dt::seed_buffer(traffic_cfg(1), buf, 0, rng) == 0);
  CHECK(buf.size() == 0);
}

TEST_CASE("seed_buffer: H=512 stores exactly 512 tree-policy transitions") {
  replay::ReplayBuffer buf(1024, 0.6, 1e-3);
  Rng rng(2);
  size_t n = dt::seed_buffer(traffic_cfg(2), buf, 512, rng);
  CHECK(n == 512);
  CHECK(buf.size() == 512);
  for (size_t s = 0; s < buf.size(); ++s) {
    int a = buf.at(s).action;
    CHECK(a >= sim::kStay);
    CHECK(a <= sim::kRight);  // the seeding tree never accelerates or brakes
  }
}

TEST_CASE("the tree never commands a lane change into an occupied gap") {
  Rng seeds(77);
  int steps = 0;
  int changes = 0;
  while (steps < 10000) {
    sim::EnvConfig cfg = traffic_cfg(seeds.next_u64());
    sim::Env env(cfg);
    while (!env.terminal() && steps < 10000) {
      DtObservation obs = dt::extract_dt_observation(env);
      int a = dt::dt_decide(obs);
      if (a == sim::kLeft) {
        CHECK_FALSE(env.adjacent_occupied(-1, cfg.desired_gap()));
        ++changes;
      }
      if (a == sim::kRight) {
        CHECK_FALSE(env.adjacent_occupied(+1, cfg.desired_gap()));
        ++changes;
      }
      sim::StepOutcome out = env.step(a);
      CHECK_FALSE(out.lane_violation);
      ++steps;
    }
  }
  CHECK(steps == 10000);
  (void)changes;
}
