#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <set>

#include "doctest.h"
#include "drnet/sim.hpp"

using namespace drnet;
using sim::Env;
using sim::EnvConfig;
using sim::OccupancyState;

namespace {

EnvConfig small_cfg(uint64_t seed = 1) {
  EnvConfig cfg;
  cfg.episode_length_m = 600.0;
  cfg.rng_seed = seed;
  return cfg;
}

EnvConfig empty_cfg(uint64_t seed = 1) {
  EnvConfig cfg = small_cfg(seed);
  cfg.participant_count = 0;
  return cfg;
}

size_t count_set(const std::vector<uint8_t>& layer) {
  size_t n = 0;
  for (uint8_t v : layer) n += v;
  return n;
}

}  // namespace

TEST_CASE("reward_collision") {
  CHECK(sim::reward_collision(false, 10.0) == 0.0);
  CHECK(sim::reward_collision(true, 10.0) == -10.0);
  CHECK(sim::reward_collision(true, 1.0) == -1.0);
}

TEST_CASE("reward_distance") {
  CHECK(sim::reward_distance(3.0, 20.0, false, 1.0 / 20.0) == 0.0);
  CHECK(sim::reward_distance(20.0, 20.0, true, 1.0 / 20.0) == 0.0);
  CHECK(sim::reward_distance(0.0, 20.0, true, 1.0 / 20.0) == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("lambda_d normalization matches a brute-force max over sensed gaps") {
  EnvConfig cfg = small_cfg();
  cfg.desired_gap_m = 20.0;
  // gaps representable in the forward window, plus the no-leader case d=d_des
  double worst = 0.0;
  for (double d = 0.0; d <= cfg.max_sensed_gap() + 1e-9; d += 0.01)
    worst = std::max(worst, std::fabs(d - *cfg.desired_gap_m));
  CHECK(cfg.lambda_d() == doctest::Approx(1.0 / worst).epsilon(1e-9));
  CHECK(cfg.lambda_d() == doctest::Approx(1.0 / 20.0).epsilon(1e-12));
  // penalty spans exactly [-1, 0] over that range
  CHECK(sim::reward_distance(0.0, 20.0, true, cfg.lambda_d()) == doctest::Approx(-1.0));
}

TEST_CASE("reward_efficiency") {
  CHECK(sim::reward_efficiency(75.0, 75.0, 1.0 / 65.0, false, 0.7) == 0.0);
  CHECK(sim::reward_efficiency(10.0, 75.0, 1.0 / 65.0, false, 0.7) ==
        doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(sim::reward_efficiency(10.0, 75.0, 1.0 / 65.0, true, 0.7) ==
        doctest::Approx(-1.0 / 0.7).epsilon(1e-12));
}

TEST_CASE("lambda_e normalization matches a brute-force max over the speed range") {
  EnvConfig cfg = small_cfg();
  double worst = 0.0;
  for (double v = cfg.ego_v_min; v <= cfg.ego_v_max + 1e-9; v += 0.01)
    worst = std::max(worst, std::fabs(v - cfg.desired_speed));
  CHECK(cfg.lambda_e() == doctest::Approx(1.0 / worst).epsilon(1e-6));
  CHECK(cfg.lambda_e() == doctest::Approx(1.0 / 65.0).epsilon(1e-12));
}

TEST_CASE("config validation") {
  EnvConfig cfg = small_cfg();
  SUBCASE("bad density count") {
    cfg.lane_densities = {0.1, 0.2};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
  SUBCASE("density out of range") {
    cfg.lane_densities = {0.1, 0.2, 1.5};
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
  SUBCASE("desired speed above max") {
    cfg.desired_speed = 90.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
  SUBCASE("beta out of range") {
    cfg.beta_freq = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  }
  SUBCASE("overfull lane rejected") {
    cfg.participant_count = 500;  // 600 m road cannot host 500 cars without overlap
    CHECK_THROWS_AS((Env{cfg}), std::invalid_argument);
  }
}

TEST_CASE("default densities put the densest traffic in the rightmost lane") {
  EnvConfig cfg = small_cfg();
  CHECK(cfg.participants_in_lane(2) > cfg.participants_in_lane(1));
  CHECK(cfg.participants_in_lane(1) > cfg.participants_in_lane(0));

  Env env(cfg);
  std::array<int, 3> per_lane{0, 0, 0};
  for (const auto& p : env.participants()) per_lane[p.lane] += 1;
  CHECK(per_lane[2] > per_lane[1]);
  CHECK(per_lane[1] > per_lane[0]);
}

TEST_CASE("explicit participant totals distribute by density and honor zero") {
  EnvConfig cfg = small_cfg();
  cfg.participant_count = 18;
  int total = 0;
  for (int l = 0; l < 3; ++l) total += cfg.participants_in_lane(l);
  CHECK(total == 18);
  Env env(cfg);
  CHECK(env.participants().size() == 18);

  cfg.participant_count = 0;
  Env empty(cfg);
  CHECK(empty.participants().empty());
}

TEST_CASE("empty traffic: grid layers contain only the ego block") {
  Env env(empty_cfg());
  OccupancyState s = env.state();
  for (const auto& layer : s.layers) CHECK(count_set(layer) == 18);  // 6 rows x 3 cols
  // block anchored 10 cells from the rear edge, middle lane columns
  for (int r = 10; r < 16; ++r)
    for (int c = 6; c <= 8; ++c) CHECK(s.layers[2][OccupancyState::idx(r, c)] == 1);
}

TEST_CASE("same seed reproduces the initial state bit-exactly") {
  Env a(small_cfg(42)), b(small_cfg(42));
  CHECK(a.state() == b.state());
  Env c(small_cfg(43));
  CHECK(a.state() != c.state());  // different seed, different traffic
}

TEST_CASE("full episode trace is reproducible bit-exactly") {
  auto run = [](uint64_t seed) {
    Env env(small_cfg(seed));
    std::vector<double> rewards;
    std::vector<OccupancyState> states;
    int script[] = {sim::kAccelerate, sim::kStay, sim::kLeft, sim::kAccelerate, sim::kRight,
                    sim::kStay, sim::kDecelerate, sim::kStay, sim::kStay, sim::kAccelerate};
    for (int a : script) {
      if (env.terminal()) break;
      sim::StepOutcome out = env.step(a);
      rewards.push_back(out.reward);
      states.push_back(out.next_state);
    }
    return std::pair(rewards, states);
  };
  auto [r1, s1] = run(7);
  auto [r2, s2] = run(7);
  CHECK(r1 == r2);
  CHECK(s1 == s2);
}

TEST_CASE("accelerate at v_max leaves velocity clamped") {
  Env env(empty_cfg());
  while (env.ego_velocity() < env.config().ego_v_max) env.step(sim::kAccelerate);
  CHECK(env.ego_velocity() == 80.0);
  sim::StepOutcome out = env.step(sim::kAccelerate);
  CHECK(out.ego_velocity == 80.0);
}

TEST_CASE("decelerate at v_min leaves velocity clamped") {
  Env env(empty_cfg());
  sim::StepOutcome out = env.step(sim::kDecelerate);
  CHECK(out.ego_velocity == 10.0);
}

TEST_CASE("reward decomposes exactly every step") {
  Env env(small_cfg(17));
  Rng rng(5);
  while (!env.terminal() && env.steps() < 300) {
    int a = static_cast<int>(rng.uniform_index(sim::kActionCount));
    // skip illegal lane commands; the violation path has its own test
    if (a == sim::kLeft && env.ego_lane() == 0) a = sim::kStay;
    if (a == sim::kRight && env.ego_lane() == 2) a = sim::kStay;
    sim::StepOutcome out = env.step(a);
    CHECK(out.reward == out.parts.collision + out.parts.distance + out.parts.efficiency);
    CHECK(out.parts.distance >= -1.0);
    CHECK(out.parts.distance <= 0.0);
    CHECK(out.parts.efficiency >= -1.0 / env.config().beta_freq - 1e-12);
    CHECK(out.parts.efficiency <= 0.0);
    bool rc_ok = out.parts.collision == 0.0 ||
                 out.parts.collision == -env.config().lambda_collision;
    CHECK(rc_ok);
    if (out.collision) CHECK(out.terminal);
    if (out.lane_change) CHECK((a == sim::kLeft || a == sim::kRight));
  }
}

TEST_CASE("masked-out lane change reaching the env degrades to stay + violation flag") {
  Env env(empty_cfg(3));
  while (env.ego_lane() > 0) env.step(sim::kLeft);
  sim::StepOutcome out = env.step(sim::kLeft);
  CHECK(out.lane_violation);
  CHECK_FALSE(out.lane_change);
  CHECK(env.ego_lane() == 0);
}

TEST_CASE("consecutive lane changes divide the efficiency term by beta") {
  EnvConfig cfg = empty_cfg(4);
  Env env(cfg);
  while (env.ego_lane() < 2) env.step(sim::kRight);  // make room on the left
  sim::StepOutcome first = env.step(sim::kLeft);
  sim::StepOutcome second = env.step(sim::kLeft);
  CHECK(first.parts.efficiency < 0.0);
  CHECK(second.parts.efficiency ==
        doctest::Approx(first.parts.efficiency / cfg.beta_freq).epsilon(1e-12));
}

TEST_CASE("driving into a slower leader collides and terminates") {
  // hand-built scene: one cautious participant dead ahead, ego approaching
  EnvConfig cfg = empty_cfg(5);
  cfg.episode_length_m = 2000.0;
  Env env(cfg);
  (void)env;  // geometry covered via the populated variant below

  EnvConfig traffic = small_cfg(5);
  traffic.episode_length_m = 4000.0;
  Env busy(traffic);
  bool collided = false;
  int guard = 2500;
  while (!busy.terminal() && guard-- > 0) {
    sim::StepOutcome out = busy.step(sim::kAccelerate);  // floor it and never steer
    if (out.collision) {
      collided = true;
      CHECK(out.parts.collision == -traffic.lambda_collision);
      CHECK(out.terminal);
    }
  }
  CHECK(collided);  // blind full throttle cannot survive dense traffic
}

TEST_CASE("participant blocks never overlap in non-terminal states") {
  Env env(small_cfg(23));
  Rng rng(11);
  for (int t = 0; t < 400 && !env.terminal(); ++t) {
    int a = static_cast<int>(rng.uniform_index(sim::kActionCount));
    sim::StepOutcome out = env.step(a);
    if (out.terminal) break;
    const auto& ps = env.participants();
    for (size_t i = 0; i < ps.size(); ++i) {
      for (size_t j = i + 1; j < ps.size(); ++j) {
        if (ps[i].lane != ps[j].lane) continue;
        double d = std::fabs(ps[i].position - ps[j].position);
        d = std::min(d, env.config().episode_length_m - d);
        CHECK(d >= sim::kVehicleLength - 1e-9);
      }
    }
  }
}

TEST_CASE("ego lane and velocity stay inside bounds under random actions") {
  Env env(small_cfg(31));
  Rng rng(13);
  for (int t = 0; t < 400 && !env.terminal(); ++t) {
    env.step(static_cast<int>(rng.uniform_index(sim::kActionCount)));
    CHECK(env.ego_lane() >= 0);
    CHECK(env.ego_lane() < env.config().lanes);
    CHECK(env.ego_velocity() >= env.config().ego_v_min);
    CHECK(env.ego_velocity() <= env.config().ego_v_max);
  }
}

TEST_CASE("layers are binary and the ego block is constant across a run") {
  Env env(small_cfg(37));
  Rng rng(17);
  for (int t = 0; t < 120 && !env.terminal(); ++t) {
    env.step(static_cast<int>(rng.uniform_index(sim::kActionCount)));
    OccupancyState s = env.state();
    for (const auto& layer : s.layers) {
      for (uint8_t v : layer) CHECK((v == 0 || v == 1));
    }
    for (int r = 10; r < 16; ++r)
      for (int c = 6; c <= 8; ++c) CHECK(s.layers[2][OccupancyState::idx(r, c)] == 1);
  }
}

TEST_CASE("at t=0 all three layers are identical") {
  Env env(small_cfg(41));
  OccupancyState s = env.state();
  CHECK(s.layers[0] == s.layers[1]);
  CHECK(s.layers[1] == s.layers[2]);
}

TEST_CASE("forward boundary is inclusive at the sensing edge") {
  // single participant placed by scanning seeds is flaky; exercise the
  // renderer directly instead
  std::vector<uint8_t> occ(OccupancyState::kRows * OccupancyState::kCols, 0);
  sim::mark_block(occ, 20.0, 0, 1.0);  // exactly at the forward edge
  CHECK(count_set(occ) == 3);          // one clipped row remains visible
  for (int c = 6; c <= 8; ++c) CHECK(occ[OccupancyState::idx(29, c)] == 1);

  std::fill(occ.begin(), occ.end(), 0);
  sim::mark_block(occ, 21.0, 0, 1.0);  // one meter beyond: excluded
  CHECK(count_set(occ) == 0);
}

TEST_CASE("a participant fully inside the window sets exactly 18 cells") {
  std::vector<uint8_t> occ(OccupancyState::kRows * OccupancyState::kCols, 0);
  sim::mark_block(occ, 8.0, 1, 1.0);
  CHECK(count_set(occ) == 18);
  std::fill(occ.begin(), occ.end(), 0);
  sim::mark_block(occ, -16.0, 0, 1.0);  // fully behind the window
  CHECK(count_set(occ) == 0);
}

TEST_CASE("leader query respects the sensing range") {
  EnvConfig cfg = empty_cfg(6);
  Env env(cfg);
  CHECK_FALSE(env.leader().has_value());
}

TEST_CASE("text dump shows ego and participants") {
  Env env(small_cfg(51));
  std::string dump = env.dump_grid();
  CHECK(dump.find('E') != std::string::npos);
  CHECK(dump.size() == (OccupancyState::kCols + 1) * OccupancyState::kRows);
}

TEST_CASE("style layer encodes participant styles when enabled") {
  EnvConfig cfg = small_cfg(61);
  cfg.style_layer = true;
  Env env(cfg);
  OccupancyState s = env.state();
  REQUIRE_FALSE(s.style.empty());
  std::set<uint8_t> values(s.style.begin(), s.style.end());
  for (uint8_t v : values) CHECK(v <= 3);
  nn::Tensor t = s.to_tensor();
  CHECK(t.shape[0] == 4);
  for (int r = 0; r < OccupancyState::kRows; ++r)
    for (int c = 0; c < OccupancyState::kCols; ++c) {
      double v = t.at(3, r, c);
      bool ok = v == 0.0 || v == 0.25 || v == 0.5 || v == 0.75;
      CHECK(ok);
    }
}
