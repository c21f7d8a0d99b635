#include "drnet/dt_policy.hpp"

namespace drnet::dt {

DtObservation extract_dt_observation(const sim::Env& env, double high_speed_frac) {
  const sim::EnvConfig& cfg = env.config();
  DtObservation obs;
  auto leader = env.leader();
  obs.vehicle_ahead = leader.has_value();
  obs.fast_or_following = env.ego_velocity() >= high_speed_frac * cfg.ego_v_max ||
                          (leader && leader->gap < cfg.desired_gap());
  obs.left_lane_empty = env.ego_lane() > 0 && !env.adjacent_occupied(-1, cfg.desired_gap());
  obs.right_lane_empty =
      env.ego_lane() < cfg.lanes - 1 && !env.adjacent_occupied(+1, cfg.desired_gap());
  return obs;
}

int dt_decide(const DtObservation& obs) {
  if (!obs.vehicle_ahead) return sim::kStay;
  if (!obs.fast_or_following) return sim::kStay;
  if (obs.left_lane_empty) return sim::kLeft;
  if (obs.right_lane_empty) return sim::kRight;
  return sim::kStay;
}

size_t seed_buffer(const sim::EnvConfig& env_cfg, replay::ReplayBuffer& buffer, size_t count,
                   Rng& seed_rng, double high_speed_frac) {
  size_t stored = 0;
  while (stored < count) {
    sim::EnvConfig cfg = env_cfg;
    cfg.rng_seed = seed_rng.next_u64();
    sim::Env env(cfg);
    while (!env.terminal() && stored < count) {
      sim::OccupancyState s = env.state();
      int a = dt_decide(extract_dt_observation(env, high_speed_frac));
      sim::StepOutcome out = env.step(a);
      buffer.push(replay::Transition{std::move(s), a, out.reward, std::move(out.next_state),
                                     out.terminal});
      ++stored;
    }
  }
  return stored;
}

}  // namespace drnet::dt
