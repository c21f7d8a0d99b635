#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "drnet/agent.hpp"
#include "drnet/dt_policy.hpp"
#include "drnet/network.hpp"
#include "drnet/replay.hpp"
#include "drnet/sim.hpp"

namespace drnet::harness {

enum class Baseline {
  drnet,              // masked + seeded + prioritized
  drnet_no_subspace,  // seeded + prioritized, no action masking
  drnet_no_init,      // masked + prioritized, empty buffer at start
  ddqn_plain,         // no masking, no seeding, uniform replay
  rule_based,         // deterministic rules, no learning
  random,             // uniform over the safe subspace, no learning
};

const char* baseline_name(Baseline b);
Baseline baseline_from_name(const std::string& name);

struct RunConfig {
  sim::EnvConfig env;
  agent::AgentConfig agent;
  nn::NetworkSpec network;
  size_t buffer_size = 500000;   // B
  int seed_transitions = 512;    // H
  int episodes = 200;            // M
  int eval_episodes = 20;
  int reference_episodes = 20;   // per reference policy, for score scaling
  double priority_alpha = 0.6;
  double priority_floor = 1e-3;
  double dt_high_speed_frac = dt::kDefaultHighSpeedFrac;
  Baseline baseline = Baseline::drnet;
  uint64_t rng_seed = 1;
  std::string out_dir;

  void validate() const;
  std::string canonical_json() const;
  std::string fingerprint() const;  // fnv1a-64 hex of the canonical form
};

// Small, fast configuration used by the test and acceptance suites.
RunConfig desk_scale_config();

// Strict parse: unknown keys anywhere are rejected.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

struct EpisodeRow {
  int episode = 0;
  int steps = 0;
  double reward = 0.0;
  bool collided = false;
  int lane_changes = 0;
  double mean_velocity = 0.0;
  double score = 0.0;  // normalized against the run's references
};

struct References {
  double r_rule = 0.0;
  double r_random = 0.0;
};

// (r - r_random) / (r_rule - r_random); rejects equal references.
double normalized_score(double r, double r_rule, double r_random);

// sigma = v_mean * safety / lc_mean; 0 when safety is 0, +inf when lc_mean
// is 0 with nonzero safety.
double decision_efficiency(double v_mean, double safety_ratio, double lc_mean);

struct TrainResult {
  nn::Network online, target;
  bool trained = false;  // false for the rule/random baselines
  std::vector<EpisodeRow> log;
  References refs;
  size_t initial_buffer_size = 0;  // right before the first episode
  size_t negative_samples = 0;
  size_t train_steps = 0;
};

struct RunMetrics {
  double v_mean = 0.0;
  double safety_ratio = 0.0;
  double lc_mean = 0.0;
  double sigma = 0.0;
  bool sigma_inf = false;
  size_t mask_violations = 0;  // executed actions with w = 0 (masked policies)
  size_t lane_violations = 0;
  std::vector<EpisodeRow> episodes;
};

// Policy used for evaluation, reference measurement, and trajectory
// prediction.
struct EvalPolicy {
  enum class Kind { greedy_masked, greedy_unmasked, softmax, rule, dt, random_masked };
  Kind kind = Kind::greedy_masked;
  const nn::Network* net = nullptr;
  double high_speed_frac = dt::kDefaultHighSpeedFrac;

  int act(const sim::Env& env, Rng& rng) const;
  bool masked() const {
    return kind == Kind::greedy_masked || kind == Kind::random_masked || kind == Kind::rule ||
           kind == Kind::dt;
  }
};

// Boltzmann selection over raw Q-values (the no-subspace ablation's rule).
int softmax_action(const std::vector<double>& q, Rng& rng);

// Deterministic car-following rules layered under the lane-change tree:
// change lanes when the tree says so, otherwise back off behind a close or
// slower leader and track the desired speed on a clear road.
int rule_decide(const sim::Env& env, double high_speed_frac = dt::kDefaultHighSpeedFrac);

References measure_references(const RunConfig& cfg);

// Algorithm-style training loop: optional tree seeding, per-step masking and
// negative samples, replay-period-gated prioritized updates, soft target
// updates. Writes run_config.json, training_log.csv, scores.csv and the
// checkpoint files when out_dir is set.
TrainResult train(const RunConfig& cfg);

RunMetrics evaluate(const EvalPolicy& policy, const RunConfig& cfg, int n_episodes);

// Policy the baseline evaluates with (its own safety configuration).
EvalPolicy eval_policy_for(const RunConfig& cfg, const TrainResult& result);

struct TrialResult {
  TrainResult train;
  RunMetrics eval;
};

// train + evaluate; writes metrics.csv into out_dir when set.
TrialResult run_trial(const RunConfig& cfg);

// Independent trials in parallel worker slots; result order matches input.
std::vector<TrialResult> run_batch(const std::vector<RunConfig>& configs, int parallelism = 0);

struct SweepAxis {
  std::string key;  // discount | buffer_size | dense_units | conv_layers |
                    // sensing_range | participant_count | epsilon_decay
  std::vector<double> values;
};

struct SweepCell {
  std::vector<double> axis_values;
  std::string run_id;
  uint64_t seed = 0;
  RunMetrics metrics;
};

struct SweepResult {
  std::vector<SweepAxis> axes;
  std::vector<SweepCell> cells;  // row-major over the axis grid
  std::string rows_csv_path;
  std::string pivot_csv_path;  // 2-axis sweeps only
};

// Unknown axis keys are rejected before any trial runs. Cell c gets seed
// base_seed + c so a single-cell sweep reproduces the plain run exactly.
SweepResult sweep(const RunConfig& base, const std::vector<SweepAxis>& axes,
                  const std::string& out_dir, int parallelism = 0);

// ---- trajectory-window datasets --------------------------------------------

struct TrajReport {
  int non_merge_total = 0, non_merge_correct = 0;
  int merge_total = 0, merge_correct = 0;
  double non_merge_accuracy() const {
    return non_merge_total ? static_cast<double>(non_merge_correct) / non_merge_total : 0.0;
  }
  double merge_accuracy() const {
    return merge_total ? static_cast<double>(merge_correct) / merge_total : 0.0;
  }
  std::string to_table() const;  // two-row table: non-merge / merge
};

// Balanced labeled windows from the lane-change tree driving the simulator.
// Positions are written in the per-timeslot ego frame.
void generate_trajectory_dataset(const sim::EnvConfig& env_cfg, int n_windows, int window_len,
                                 const std::string& path, Rng& rng,
                                 double high_speed_frac = dt::kDefaultHighSpeedFrac);

// Reconstructs the grid state of each window, queries the policy, and scores
// merge-vs-stay predictions per class. Malformed rows are reported with line
// numbers; every timeslot needs exactly one ego row.
TrajReport eval_trajectories(const std::string& path, const EvalPolicy& policy,
                             const RunConfig& cfg);

// Re-derives metrics/plot-data files from a completed run directory; never
// overwrites (existing names get a numeric suffix). Returns written paths.
std::vector<std::string> export_run(const std::string& run_dir);

// ---- file helpers shared by the CLI and tests ------------------------------

std::string format_double(double v);  // shortest round-trip decimal
std::string unique_path(const std::string& dir, const std::string& filename);
void write_metrics_csv(const std::string& path, const RunConfig& cfg, const RunMetrics& m);

}  // namespace drnet::harness
