#include "drnet/agent.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace drnet::agent {

void AgentConfig::validate() const {
  if (discount < 0.0 || discount > 1.0)
    throw std::invalid_argument("agent: discount must be in [0,1]");
  if (!(soft_update_tau > 0.0 && soft_update_tau <= 1.0))
    throw std::invalid_argument("agent: tau must be in (0,1]");
  if (epsilon_min > epsilon_start)
    throw std::invalid_argument("agent: epsilon_min must not exceed epsilon_start");
  if (minibatch < 1 || replay_period < 1 || episode_budget < 1)
    throw std::invalid_argument("agent: minibatch, replay_period and episode_budget must be >= 1");
  if (learning_rate <= 0.0) throw std::invalid_argument("agent: learning rate must be positive");
  if (epsilon_decay <= 0.0 || epsilon_decay > 1.0)
    throw std::invalid_argument("agent: epsilon_decay must be in (0,1]");
  if (target_hard_copy_period && *target_hard_copy_period < 1)
    throw std::invalid_argument("agent: target_hard_copy_period must be >= 1");
}

ActionMask compute_action_mask(const sim::EgoView& view) {
  ActionMask m;
  m.w[sim::kStay] = 1;
  m.w[sim::kLeft] = (view.lane > 0 && !view.left_gap_occupied) ? 1 : 0;
  m.w[sim::kRight] = (view.lane < view.lanes - 1 && !view.right_gap_occupied) ? 1 : 0;

  bool accel_safe = view.velocity < view.v_max;
  if (view.leader) {
    double headway_m = kAccelHeadwaySeconds * view.velocity * sim::kKmhToMps;
    if (view.leader->gap < headway_m) accel_safe = false;
  }
  m.w[sim::kAccelerate] = accel_safe ? 1 : 0;
  m.w[sim::kDecelerate] = view.velocity > view.v_min ? 1 : 0;
  return m;
}

std::vector<double> q_values(const nn::Network& net, const sim::OccupancyState& s) {
  nn::Tensor in = s.to_tensor();
  if (in.shape[0] != net.spec().input_layers || in.shape[1] != net.spec().input_rows ||
      in.shape[2] != net.spec().input_cols)
    throw std::invalid_argument("agent: state shape " + in.shape_str() +
                                " does not match the network input");
  return net.eval(in);
}

int unmasked_argmax(const std::vector<double>& q) {
  int best = 0;
  for (int a = 1; a < static_cast<int>(q.size()); ++a)
    if (q[a] > q[best]) best = a;
  return best;
}

int select_action(const std::vector<double>& q, const ActionMask& mask, double epsilon, Rng& rng) {
  if (mask.safe_count() == 0)
    throw std::logic_error("agent: empty action subspace (mask bug upstream)");
  if (rng.uniform() < epsilon) {
    int pick = static_cast<int>(rng.uniform_index(mask.safe_count()));
    for (int a = 0; a < sim::kActionCount; ++a) {
      if (!mask.safe(a)) continue;
      if (pick-- == 0) return a;
    }
  }
  int best = -1;
  double best_q = -std::numeric_limits<double>::infinity();
  for (int a = 0; a < static_cast<int>(q.size()); ++a) {
    double v = mask.safe(a) ? q[a] : -std::numeric_limits<double>::infinity();
    if (v > best_q) {
      best_q = v;
      best = a;
    }
  }
  return best;
}

bool masked_by_danger(const sim::EgoView& view, int action) {
  switch (action) {
    case sim::kLeft:
      return view.lane == 0 || view.left_gap_occupied;
    case sim::kRight:
      return view.lane == view.lanes - 1 || view.right_gap_occupied;
    case sim::kAccelerate:
      return view.leader &&
             view.leader->gap < kAccelHeadwaySeconds * view.velocity * sim::kKmhToMps;
    default:
      return false;  // stay is never masked; decelerate only clamps at v_min
  }
}

void record_negative_sample(const sim::OccupancyState& s, int action,
                            replay::ReplayBuffer& buffer) {
  replay::Transition t;
  t.state = s;
  t.action = action;
  t.reward = -1.0;
  t.next_state = s;  // self-loop
  t.terminal = false;
  buffer.push(std::move(t));
}

double ddqn_target(const replay::Transition& t, const nn::Network& online,
                   const nn::Network& target, double gamma) {
  if (!online.same_spec(target))
    throw std::invalid_argument("agent: online/target network specs differ");
  if (t.terminal) return t.reward;
  nn::Tensor next = t.next_state.to_tensor();
  int a_star = unmasked_argmax(online.eval(next));
  return t.reward + gamma * target.eval(next)[a_star];
}

double td_error(const replay::Transition& t, const nn::Network& online,
                const nn::Network& target, double gamma) {
  double y = ddqn_target(t, online, target, gamma);
  return y - online.eval(t.state.to_tensor())[t.action];
}

std::vector<double> train_step(nn::Network& online, const nn::Network& target,
                               const std::vector<replay::SampleRef>& batch, double gamma,
                               double eta) {
  nn::Grads accum = online.zero_grads();
  std::vector<double> abs_errors;
  abs_errors.reserve(batch.size());

  for (const auto& ref : batch) {
    const replay::Transition& t = ref.transition;
    nn::ForwardTrace trace;
    online.forward(t.state.to_tensor(), trace);
    double y = ddqn_target(t, online, target, gamma);
    double delta = y - trace.output()[t.action];
    if (!std::isfinite(delta))
      throw std::runtime_error("agent: non-finite TD-error (target " + std::to_string(y) + ")");

    // gradient flows only through the taken action's output unit
    std::vector<double> out_grad(trace.output().size(), 0.0);
    out_grad[t.action] = delta;
    accum.add(online.backward(trace, out_grad));
    abs_errors.push_back(std::fabs(delta));
  }

  if (!accum.all_finite()) throw std::runtime_error("agent: non-finite gradient accumulation");
  online.apply_update(accum, eta);
  return abs_errors;
}

void soft_update(const nn::Network& online, nn::Network& target, double tau) {
  if (!online.same_spec(target))
    throw std::invalid_argument("agent: online/target network specs differ");
  auto& tl = target.layers_mut();
  const auto& ol = online.layers();
  for (size_t l = 0; l < ol.size(); ++l) {
    for (size_t i = 0; i < ol[l].w.size(); ++i)
      tl[l].w[i] = tau * ol[l].w[i] + (1.0 - tau) * tl[l].w[i];
    for (size_t i = 0; i < ol[l].b.size(); ++i)
      tl[l].b[i] = tau * ol[l].b[i] + (1.0 - tau) * tl[l].b[i];
  }
}

double epsilon_schedule(uint64_t t, double epsilon_start, double decay, double epsilon_min) {
  return std::max(epsilon_start * std::pow(decay, static_cast<double>(t)), epsilon_min);
}

}  // namespace drnet::agent
