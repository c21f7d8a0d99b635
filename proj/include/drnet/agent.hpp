#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "drnet/network.hpp"
#include "drnet/replay.hpp"
#include "drnet/rng.hpp"
#include "drnet/sim.hpp"

namespace drnet::agent {

struct AgentConfig {
  double discount = 0.93;         // gamma
  double learning_rate = 0.0005;  // eta
  double soft_update_tau = 0.001;
  int minibatch = 32;             // k
  int replay_period = 4;          // K: train every K environment steps
  double epsilon_start = 1.0;
  double epsilon_min = 0.001;
  double epsilon_decay = 0.93;    // per environment step
  int episode_budget = 3000;      // T: step cap per episode
  // When set, the target is hard-copied every N training steps instead of
  // soft-updated each one.
  std::optional<int> target_hard_copy_period;

  void validate() const;  // throws std::invalid_argument
};

// Per-action safety bits; w[k] = 0 marks a potentially dangerous action.
struct ActionMask {
  std::array<uint8_t, sim::kActionCount> w{1, 1, 1, 1, 1};

  bool safe(int a) const { return w[a] != 0; }
  int safe_count() const {
    int n = 0;
    for (uint8_t x : w) n += x;
    return n;
  }
};

// Accelerating is masked when the time headway to the leader at the current
// speed falls below this.
inline constexpr double kAccelHeadwaySeconds = 2.0;

// Safety bits from the current scene: lane changes need an existing lane and
// a clear +/- gap_window; accelerate needs headway and room below v_max;
// decelerate needs room above v_min. Stay is always safe, so the subspace is
// never empty.
ActionMask compute_action_mask(const sim::EgoView& view);

std::vector<double> q_values(const nn::Network& net, const sim::OccupancyState& s);

// Epsilon-greedy restricted to the safe subspace; masked entries are treated
// as -inf for the argmax and ties break toward the lowest action index.
int select_action(const std::vector<double>& q, const ActionMask& mask, double epsilon, Rng& rng);

// Highest-Q action ignoring the mask (used for negative-sample detection).
int unmasked_argmax(const std::vector<double>& q);

// True when the mask zeroes this action for a hazard (occupied or missing
// target lane, accelerating inside the headway) rather than a plain
// speed-bound clamp. Only hazard-masked greedy actions become negative
// samples: the grid state carries no ego speed, so bound-clamp penalties
// would alias onto every state with the same picture.
bool masked_by_danger(const sim::EgoView& view, int action);

// Stores (s, a, -1, s, non-terminal) for a masked-out greedy action.
void record_negative_sample(const sim::OccupancyState& s, int action,
                            replay::ReplayBuffer& buffer);

// Y = r + gamma * Q_target(s', argmax_a Q_online(s', a)); Y = r when terminal.
double ddqn_target(const replay::Transition& t, const nn::Network& online,
                   const nn::Network& target, double gamma);

// delta = Y - Q_online(s, a)
double td_error(const replay::Transition& t, const nn::Network& online,
                const nn::Network& target, double gamma);

// Accumulates delta_m * grad Q(s_m, a_m) over the batch, applies a single
// theta += eta * accumulated update, and returns each |delta| for the
// priority refresh. Throws on non-finite errors or gradients.
std::vector<double> train_step(nn::Network& online, const nn::Network& target,
                               const std::vector<replay::SampleRef>& batch, double gamma,
                               double eta);

// theta_target <- tau * theta_online + (1 - tau) * theta_target
void soft_update(const nn::Network& online, nn::Network& target, double tau);

// max(e0 * decay^t, e_min)
double epsilon_schedule(uint64_t t, double epsilon_start, double decay, double epsilon_min);

}  // namespace drnet::agent
