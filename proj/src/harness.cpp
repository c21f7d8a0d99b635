#include "drnet/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace drnet::harness {

namespace fs = std::filesystem;

namespace {

// seed-stream tags; every consumer derives its own stream from the run seed
constexpr uint64_t kStreamNetInit = 1;
constexpr uint64_t kStreamAgent = 2;
constexpr uint64_t kStreamSeeding = 3;
constexpr uint64_t kStreamEvalPolicy = 4;
constexpr uint64_t kStreamTrainEp = 1'000'000;
constexpr uint64_t kStreamEvalEp = 2'000'000;
constexpr uint64_t kStreamRefRule = 3'000'000;
constexpr uint64_t kStreamRefRandom = 4'000'000;

uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hex64(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

bool uses_network(Baseline b) {
  return b == Baseline::drnet || b == Baseline::drnet_no_subspace ||
         b == Baseline::drnet_no_init || b == Baseline::ddqn_plain;
}
bool uses_mask(Baseline b) { return b == Baseline::drnet || b == Baseline::drnet_no_init; }
bool uses_seeding(Baseline b) {
  return b == Baseline::drnet || b == Baseline::drnet_no_subspace;
}
bool uses_priorities(Baseline b) { return uses_network(b) && b != Baseline::ddqn_plain; }

void ensure_dir(const std::string& dir) {
  if (!dir.empty()) fs::create_directories(dir);
}

}  // namespace

const char* baseline_name(Baseline b) {
  switch (b) {
    case Baseline::drnet: return "drnet";
    case Baseline::drnet_no_subspace: return "drnet_no_subspace";
    case Baseline::drnet_no_init: return "drnet_no_init";
    case Baseline::ddqn_plain: return "ddqn_plain";
    case Baseline::rule_based: return "rule_based";
    case Baseline::random: return "random";
  }
  return "drnet";
}

Baseline baseline_from_name(const std::string& name) {
  for (Baseline b : {Baseline::drnet, Baseline::drnet_no_subspace, Baseline::drnet_no_init,
                     Baseline::ddqn_plain, Baseline::rule_based, Baseline::random})
    if (name == baseline_name(b)) return b;
  throw std::invalid_argument("unknown baseline: " + name);
}

void RunConfig::validate() const {
  env.validate();
  agent.validate();
  nn::NetworkSpec spec = network;
  spec.normalize();
  spec.validate();
  if (spec.outputs != sim::kActionCount)
    throw std::invalid_argument("config: network outputs must equal the action count");
  int want_layers = env.style_layer ? 4 : 3;
  if (spec.input_layers != want_layers)
    throw std::invalid_argument("config: network input_layers must match the state depth");
  if (buffer_size == 0) throw std::invalid_argument("config: buffer_size must be positive");
  if (seed_transitions < 0 || static_cast<size_t>(seed_transitions) > buffer_size)
    throw std::invalid_argument("config: seed_transitions must fit in the buffer");
  if (episodes < 1 || eval_episodes < 1 || reference_episodes < 1)
    throw std::invalid_argument("config: episode counts must be >= 1");
  if (priority_alpha < 0.0 || priority_floor <= 0.0)
    throw std::invalid_argument("config: bad priority parameters");
  if (dt_high_speed_frac <= 0.0 || dt_high_speed_frac > 1.0)
    throw std::invalid_argument("config: dt_high_speed_frac must be in (0,1]");
}

std::string RunConfig::fingerprint() const { return hex64(fnv1a64(canonical_json())); }

double normalized_score(double r, double r_rule, double r_random) {
  if (r_rule == r_random)
    throw std::invalid_argument("normalized_score: reference rewards must differ");
  return (r - r_random) / (r_rule - r_random);
}

double decision_efficiency(double v_mean, double safety_ratio, double lc_mean) {
  if (safety_ratio == 0.0) return 0.0;
  if (lc_mean == 0.0) return std::numeric_limits<double>::infinity();
  return v_mean * safety_ratio / lc_mean;
}

int rule_decide(const sim::Env& env, double high_speed_frac) {
  dt::DtObservation obs = dt::extract_dt_observation(env, high_speed_frac);
  int tree_action = dt::dt_decide(obs);
  if (tree_action != sim::kStay) return tree_action;

  const sim::EnvConfig& cfg = env.config();
  double v = env.ego_velocity();
  if (auto leader = env.leader()) {
    if (leader->gap < cfg.desired_gap() || leader->speed < v) return sim::kDecelerate;
    return sim::kStay;
  }
  if (v < cfg.desired_speed) return sim::kAccelerate;
  if (v > cfg.desired_speed) return sim::kDecelerate;
  return sim::kStay;
}

int softmax_action(const std::vector<double>& q, Rng& rng) {
  double max_q = *std::max_element(q.begin(), q.end());
  std::vector<double> w(q.size());
  double total = 0.0;
  for (size_t a = 0; a < q.size(); ++a) {
    w[a] = std::exp(q[a] - max_q);
    total += w[a];
  }
  double u = rng.uniform() * total;
  for (size_t a = 0; a < q.size(); ++a) {
    u -= w[a];
    if (u <= 0.0) return static_cast<int>(a);
  }
  return static_cast<int>(q.size()) - 1;
}

int EvalPolicy::act(const sim::Env& env, Rng& rng) const {
  switch (kind) {
    case Kind::rule:
      return rule_decide(env, high_speed_frac);
    case Kind::dt:
      return dt::dt_decide(dt::extract_dt_observation(env, high_speed_frac));
    case Kind::random_masked: {
      agent::ActionMask mask =
          agent::compute_action_mask(env.ego_view(env.config().desired_gap()));
      std::vector<double> zeros(sim::kActionCount, 0.0);
      return agent::select_action(zeros, mask, 1.0, rng);
    }
    case Kind::greedy_masked: {
      agent::ActionMask mask =
          agent::compute_action_mask(env.ego_view(env.config().desired_gap()));
      return agent::select_action(agent::q_values(*net, env.state()), mask, 0.0, rng);
    }
    case Kind::greedy_unmasked: {
      return agent::unmasked_argmax(agent::q_values(*net, env.state()));
    }
    case Kind::softmax: {
      return softmax_action(agent::q_values(*net, env.state()), rng);
    }
  }
  return sim::kStay;
}

namespace {

struct EpisodeStats {
  int steps = 0;
  double reward = 0.0;
  bool collided = false;
  int lane_changes = 0;
  double velocity_sum = 0.0;
};

// Runs one full episode under a policy (no learning).
EpisodeStats run_policy_episode(const RunConfig& cfg, const EvalPolicy& policy, uint64_t env_seed,
                                Rng& policy_rng, RunMetrics* violations = nullptr) {
  sim::EnvConfig env_cfg = cfg.env;
  env_cfg.rng_seed = env_seed;
  sim::Env env(env_cfg);
  EpisodeStats st;
  for (int t = 0; t < cfg.agent.episode_budget && !env.terminal(); ++t) {
    int a = policy.act(env, policy_rng);
    if (violations && policy.masked()) {
      agent::ActionMask mask = agent::compute_action_mask(env.ego_view(env_cfg.desired_gap()));
      if (!mask.safe(a)) ++violations->mask_violations;
    }
    sim::StepOutcome out = env.step(a);
    if (violations && out.lane_violation) ++violations->lane_violations;
    st.steps += 1;
    st.reward += out.reward;
    st.collided = st.collided || out.collision;
    st.lane_changes += out.lane_change ? 1 : 0;
    st.velocity_sum += out.ego_velocity;
  }
  return st;
}

EpisodeRow to_row(int episode, const EpisodeStats& st, const References* refs) {
  EpisodeRow row;
  row.episode = episode;
  row.steps = st.steps;
  row.reward = st.reward;
  row.collided = st.collided;
  row.lane_changes = st.lane_changes;
  row.mean_velocity = st.steps > 0 ? st.velocity_sum / st.steps : 0.0;
  row.score = refs ? normalized_score(st.reward, refs->r_rule, refs->r_random) : 0.0;
  return row;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << content;
  if (!f) throw std::runtime_error("write failed: " + path);
}

std::string training_log_csv(const std::vector<EpisodeRow>& log) {
  std::string out = "episode,steps,reward,collided,lane_changes,v_mean,score\n";
  for (const auto& r : log) {
    out += std::to_string(r.episode) + ',' + std::to_string(r.steps) + ',' +
           format_double(r.reward) + ',' + (r.collided ? "1" : "0") + ',' +
           std::to_string(r.lane_changes) + ',' + format_double(r.mean_velocity) + ',' +
           format_double(r.score) + '\n';
  }
  return out;
}

std::string scores_csv(const std::vector<EpisodeRow>& log) {
  std::string out = "episode,score\n";
  for (const auto& r : log)
    out += std::to_string(r.episode) + ',' + format_double(r.score) + '\n';
  return out;
}

}  // namespace

References measure_references(const RunConfig& cfg) {
  References refs;
  EvalPolicy rule{EvalPolicy::Kind::rule, nullptr, cfg.dt_high_speed_frac};
  EvalPolicy rnd{EvalPolicy::Kind::random_masked, nullptr, cfg.dt_high_speed_frac};
  Rng rule_rng(mix_seed(cfg.rng_seed, kStreamEvalPolicy));
  Rng rnd_rng(mix_seed(cfg.rng_seed, kStreamEvalPolicy + 1));
  double rule_sum = 0.0, rnd_sum = 0.0;
  for (int i = 0; i < cfg.reference_episodes; ++i) {
    rule_sum +=
        run_policy_episode(cfg, rule, mix_seed(cfg.rng_seed, kStreamRefRule + i), rule_rng).reward;
    rnd_sum +=
        run_policy_episode(cfg, rnd, mix_seed(cfg.rng_seed, kStreamRefRandom + i), rnd_rng).reward;
  }
  refs.r_rule = rule_sum / cfg.reference_episodes;
  refs.r_random = rnd_sum / cfg.reference_episodes;
  return refs;
}

TrainResult train(const RunConfig& cfg) {
  cfg.validate();
  TrainResult res;
  res.refs = measure_references(cfg);

  const Baseline b = cfg.baseline;
  nn::NetworkSpec spec = cfg.network;
  spec.normalize();
  spec.learning_rate = cfg.agent.learning_rate;

  if (!uses_network(b)) {
    // rule/random baselines: log the policy's own episodes, no learning
    EvalPolicy policy{b == Baseline::rule_based ? EvalPolicy::Kind::rule
                                                : EvalPolicy::Kind::random_masked,
                      nullptr, cfg.dt_high_speed_frac};
    Rng policy_rng(mix_seed(cfg.rng_seed, kStreamAgent));
    for (int ep = 1; ep <= cfg.episodes; ++ep) {
      EpisodeStats st =
          run_policy_episode(cfg, policy, mix_seed(cfg.rng_seed, kStreamTrainEp + ep), policy_rng);
      res.log.push_back(to_row(ep, st, &res.refs));
    }
  } else {
    res.online = nn::Network(spec, mix_seed(cfg.rng_seed, kStreamNetInit));
    res.target = res.online;
    res.trained = true;

    replay::ReplayBuffer buffer(cfg.buffer_size, uses_priorities(b) ? cfg.priority_alpha : 0.0,
                                cfg.priority_floor);
    if (uses_seeding(b) && cfg.seed_transitions > 0) {
      Rng seeder(mix_seed(cfg.rng_seed, kStreamSeeding));
      dt::seed_buffer(cfg.env, buffer, static_cast<size_t>(cfg.seed_transitions), seeder,
                      cfg.dt_high_speed_frac);
    }
    res.initial_buffer_size = buffer.size();

    Rng agent_rng(mix_seed(cfg.rng_seed, kStreamAgent));
    uint64_t global_step = 0;
    const size_t k = static_cast<size_t>(cfg.agent.minibatch);

    for (int ep = 1; ep <= cfg.episodes; ++ep) {
      sim::EnvConfig env_cfg = cfg.env;
      env_cfg.rng_seed = mix_seed(cfg.rng_seed, kStreamTrainEp + ep);
      sim::Env env(env_cfg);
      EpisodeStats st;

      for (int t = 0; t < cfg.agent.episode_budget && !env.terminal(); ++t) {
        sim::OccupancyState s = env.state();
        std::vector<double> q = agent::q_values(res.online, s);

        agent::ActionMask mask;  // all-ones unless this baseline masks
        if (uses_mask(b)) {
          sim::EgoView view = env.ego_view(env_cfg.desired_gap());
          mask = agent::compute_action_mask(view);
          int raw = agent::unmasked_argmax(q);
          if (!mask.safe(raw) && agent::masked_by_danger(view, raw)) {
            agent::record_negative_sample(s, raw, buffer);
            ++res.negative_samples;
          }
        }

        int a;
        if (b == Baseline::drnet_no_subspace) {
          a = softmax_action(q, agent_rng);  // soft-max selection, no masking
        } else {
          double eps = agent::epsilon_schedule(global_step, cfg.agent.epsilon_start,
                                               cfg.agent.epsilon_decay, cfg.agent.epsilon_min);
          a = agent::select_action(q, mask, eps, agent_rng);
        }
        sim::StepOutcome out = env.step(a);
        buffer.push(replay::Transition{std::move(s), a, out.reward, out.next_state, out.terminal});

        ++global_step;
        if (global_step % static_cast<uint64_t>(cfg.agent.replay_period) == 0 &&
            buffer.size() >= k) {
          std::vector<replay::SampleRef> batch = buffer.sample(k, agent_rng);
          std::vector<double> deltas =
              agent::train_step(res.online, res.target, batch, cfg.agent.discount,
                                cfg.agent.learning_rate);
          if (uses_priorities(b))
            for (size_t i = 0; i < batch.size(); ++i)
              buffer.update_priority(batch[i], deltas[i]);
          ++res.train_steps;
          if (cfg.agent.target_hard_copy_period) {
            if (res.train_steps % static_cast<size_t>(*cfg.agent.target_hard_copy_period) == 0)
              res.target = res.online;
          } else {
            agent::soft_update(res.online, res.target, cfg.agent.soft_update_tau);
          }
        }

        st.steps += 1;
        st.reward += out.reward;
        st.collided = st.collided || out.collision;
        st.lane_changes += out.lane_change ? 1 : 0;
        st.velocity_sum += out.ego_velocity;
      }
      res.log.push_back(to_row(ep, st, &res.refs));
    }
  }

  if (!cfg.out_dir.empty()) {
    ensure_dir(cfg.out_dir);
    write_text_file(unique_path(cfg.out_dir, "run_config.json"), cfg.canonical_json());
    write_text_file(unique_path(cfg.out_dir, "training_log.csv"), training_log_csv(res.log));
    write_text_file(unique_path(cfg.out_dir, "scores.csv"), scores_csv(res.log));
    if (res.trained) {
      res.online.save(unique_path(cfg.out_dir, "checkpoint_online.json"), cfg.rng_seed);
      res.target.save(unique_path(cfg.out_dir, "checkpoint_target.json"), cfg.rng_seed);
    }
  }
  return res;
}

EvalPolicy eval_policy_for(const RunConfig& cfg, const TrainResult& result) {
  EvalPolicy p;
  p.high_speed_frac = cfg.dt_high_speed_frac;
  switch (cfg.baseline) {
    case Baseline::drnet:
    case Baseline::drnet_no_init:
      p.kind = EvalPolicy::Kind::greedy_masked;
      p.net = &result.online;
      break;
    case Baseline::drnet_no_subspace:
      p.kind = EvalPolicy::Kind::softmax;
      p.net = &result.online;
      break;
    case Baseline::ddqn_plain:
      p.kind = EvalPolicy::Kind::greedy_unmasked;
      p.net = &result.online;
      break;
    case Baseline::rule_based:
      p.kind = EvalPolicy::Kind::rule;
      break;
    case Baseline::random:
      p.kind = EvalPolicy::Kind::random_masked;
      break;
  }
  return p;
}

RunMetrics evaluate(const EvalPolicy& policy, const RunConfig& cfg, int n_episodes) {
  if (n_episodes < 1) throw std::invalid_argument("evaluate: needs at least one episode");
  RunMetrics m;
  Rng policy_rng(mix_seed(cfg.rng_seed, kStreamEvalPolicy + 2));
  double v_sum = 0.0;
  int safe_episodes = 0;
  double lc_sum = 0.0;
  for (int i = 0; i < n_episodes; ++i) {
    EpisodeStats st =
        run_policy_episode(cfg, policy, mix_seed(cfg.rng_seed, kStreamEvalEp + i), policy_rng, &m);
    EpisodeRow row = to_row(i + 1, st, nullptr);
    v_sum += row.mean_velocity;
    safe_episodes += st.collided ? 0 : 1;
    lc_sum += st.lane_changes;
    m.episodes.push_back(row);
  }
  m.v_mean = v_sum / n_episodes;
  m.safety_ratio = static_cast<double>(safe_episodes) / n_episodes;
  m.lc_mean = lc_sum / n_episodes;
  m.sigma = decision_efficiency(m.v_mean, m.safety_ratio, m.lc_mean);
  m.sigma_inf = std::isinf(m.sigma);
  return m;
}

TrialResult run_trial(const RunConfig& cfg) {
  TrialResult r;
  r.train = train(cfg);
  EvalPolicy policy = eval_policy_for(cfg, r.train);
  r.eval = evaluate(policy, cfg, cfg.eval_episodes);
  if (!cfg.out_dir.empty())
    write_metrics_csv(unique_path(cfg.out_dir, "metrics.csv"), cfg, r.eval);
  return r;
}

std::vector<TrialResult> run_batch(const std::vector<RunConfig>& configs, int parallelism) {
  std::vector<TrialResult> results(configs.size());
  if (configs.empty()) return results;
  unsigned workers = parallelism > 0 ? static_cast<unsigned>(parallelism)
                                     : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min<unsigned>(workers, configs.size());

  std::atomic<size_t> next{0};
  std::vector<std::thread> pool;
  std::atomic<bool> failed{false};
  std::string error_message;
  std::mutex error_mutex;

  auto work = [&]() {
    for (;;) {
      size_t i = next.fetch_add(1);
      if (i >= configs.size()) return;
      try {
        results[i] = run_trial(configs[i]);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(error_mutex);
        failed = true;
        if (error_message.empty()) error_message = e.what();
      }
    }
  };
  for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (failed) throw std::runtime_error("run_batch: trial failed: " + error_message);
  return results;
}

namespace {

void apply_axis(RunConfig& cfg, const std::string& key, double value) {
  if (key == "discount") {
    cfg.agent.discount = value;
  } else if (key == "buffer_size") {
    cfg.buffer_size = static_cast<size_t>(value);
  } else if (key == "dense_units") {
    cfg.network.dense_units = static_cast<int>(value);
  } else if (key == "conv_layers") {
    cfg.network.conv_layers = static_cast<int>(value);
  } else if (key == "sensing_range") {
    cfg.env.sensing_range = value;
  } else if (key == "participant_count") {
    cfg.env.participant_count = static_cast<int>(value);
  } else if (key == "epsilon_decay") {
    cfg.agent.epsilon_decay = value;
  } else {
    throw std::invalid_argument("sweep: unknown axis key '" + key + "'");
  }
}

}  // namespace

SweepResult sweep(const RunConfig& base, const std::vector<SweepAxis>& axes,
                  const std::string& out_dir, int parallelism) {
  if (axes.empty() || axes.size() > 2)
    throw std::invalid_argument("sweep: expected one or two axes");
  for (const auto& ax : axes) {
    if (ax.values.empty()) throw std::invalid_argument("sweep: empty axis " + ax.key);
    RunConfig probe = base;
    apply_axis(probe, ax.key, ax.values[0]);  // key check before any run
  }

  SweepResult result;
  result.axes = axes;

  size_t cells = 1;
  for (const auto& ax : axes) cells *= ax.values.size();

  std::vector<RunConfig> configs;
  configs.reserve(cells);
  for (size_t c = 0; c < cells; ++c) {
    RunConfig cfg = base;
    cfg.out_dir.clear();  // a sweep writes only its own CSVs
    size_t rest = c;
    std::vector<double> vals;
    // row-major: the last axis varies fastest
    std::vector<size_t> idx(axes.size());
    for (size_t a = axes.size(); a-- > 0;) {
      idx[a] = rest % axes[a].values.size();
      rest /= axes[a].values.size();
    }
    for (size_t a = 0; a < axes.size(); ++a) {
      vals.push_back(axes[a].values[idx[a]]);
      apply_axis(cfg, axes[a].key, vals.back());
    }
    cfg.rng_seed = base.rng_seed + c;  // cell 0 of a 1x1 grid equals the plain run
    SweepCell cell;
    cell.axis_values = vals;
    cell.seed = cfg.rng_seed;
    cell.run_id = cfg.fingerprint();
    result.cells.push_back(std::move(cell));
    configs.push_back(std::move(cfg));
  }

  std::vector<TrialResult> trials = run_batch(configs, parallelism);
  for (size_t c = 0; c < cells; ++c) result.cells[c].metrics = trials[c].eval;

  ensure_dir(out_dir);

  std::string rows;
  for (const auto& ax : axes) rows += ax.key + ',';
  rows += "run_id,baseline,seed,episodes,v_mean,safety_ratio,lc_mean,sigma,fingerprint\n";
  for (size_t c = 0; c < cells; ++c) {
    const SweepCell& cell = result.cells[c];
    const RunMetrics& m = cell.metrics;
    for (double v : cell.axis_values) rows += format_double(v) + ',';
    rows += cell.run_id + ',' + baseline_name(base.baseline) + ',' + std::to_string(cell.seed) +
            ',' + std::to_string(base.eval_episodes) + ',' + format_double(m.v_mean) + ',' +
            format_double(m.safety_ratio) + ',' + format_double(m.lc_mean) + ',' +
            (m.sigma_inf ? "inf" : format_double(m.sigma)) + ',' + configs[c].fingerprint() + '\n';
  }
  result.rows_csv_path = unique_path(out_dir, "sweep_rows.csv");
  write_text_file(result.rows_csv_path, rows);

  if (axes.size() == 2) {
    // pivot: first axis down the rows, second across the columns
    std::string pivot = axes[0].key + "\\" + axes[1].key;
    for (double v : axes[1].values) pivot += ',' + format_double(v);
    pivot += '\n';
    size_t ncols = axes[1].values.size();
    for (size_t r = 0; r < axes[0].values.size(); ++r) {
      pivot += format_double(axes[0].values[r]);
      for (size_t col = 0; col < ncols; ++col) {
        const RunMetrics& m = result.cells[r * ncols + col].metrics;
        pivot += ',' + (m.sigma_inf ? std::string("inf") : format_double(m.sigma));
      }
      pivot += '\n';
    }
    result.pivot_csv_path = unique_path(out_dir, "sweep_grid.csv");
    write_text_file(result.pivot_csv_path, pivot);
  }
  return result;
}

std::string TrajReport::to_table() const {
  std::string out = "decision,observations,accuracy\n";
  out += "non_merge," + std::to_string(non_merge_total) + ',' +
         format_double(non_merge_accuracy()) + '\n';
  out += "merge," + std::to_string(merge_total) + ',' + format_double(merge_accuracy()) + '\n';
  return out;
}

void generate_trajectory_dataset(const sim::EnvConfig& env_cfg, int n_windows, int window_len,
                                 const std::string& path, Rng& rng, double high_speed_frac) {
  if (n_windows < 2) throw std::invalid_argument("trajectory dataset: need >= 2 windows");
  if (window_len < 3) throw std::invalid_argument("trajectory dataset: windows need >= 3 timeslots");

  struct SceneRow {
    int vehicle_id;
    int lane;
    double x;  // ego frame of that timeslot
    double v;
    bool is_ego;
  };
  const double dump_radius = 80.0;  // covers the sensing window and gap checks

  int want_merge = n_windows / 2;
  int want_stay = n_windows - want_merge;
  int stay_stride = 29;  // decorrelate the plentiful stay windows

  std::string csv = "window_id,t,vehicle_id,lane,x_m,v,is_ego,label\n";
  int window_id = 0;
  int merges = 0, stays = 0, stay_tick = 0;
  int episode_guard = 0;

  while ((merges < want_merge || stays < want_stay) && episode_guard < 400) {
    ++episode_guard;
    sim::EnvConfig cfg = env_cfg;
    cfg.rng_seed = rng.next_u64();
    sim::Env env(cfg);
    std::deque<std::vector<SceneRow>> scene_history;

    int budget = static_cast<int>(cfg.episode_length_m / (cfg.ego_v_min * sim::kKmhToMps)) + 10;
    for (int t = 0; t < budget && !env.terminal(); ++t) {
      std::vector<SceneRow> scene;
      scene.push_back(SceneRow{0, env.ego_lane(), 0.0, env.ego_velocity(), true});
      for (const auto& p : env.participants()) {
        double r = p.position - env.ego().position;
        // same signed ring distance the simulator uses
        double road = cfg.episode_length_m;
        r = std::fmod(r, road);
        if (r < 0) r += road;
        if (r > road * 0.5) r -= road;
        if (std::fabs(r) > dump_radius) continue;
        scene.push_back(SceneRow{p.id, p.lane, r, p.velocity, false});
      }
      scene_history.push_back(std::move(scene));
      while (static_cast<int>(scene_history.size()) > window_len) scene_history.pop_front();

      // rule-driven ego keeps encounter rates realistic; the lane-change
      // decision (and therefore the label) is the tree's own
      int tree_action = dt::dt_decide(dt::extract_dt_observation(env, high_speed_frac));
      int a = tree_action != sim::kStay ? tree_action : rule_decide(env, high_speed_frac);
      bool is_merge = tree_action == sim::kLeft || tree_action == sim::kRight;

      bool take = false;
      if (static_cast<int>(scene_history.size()) == window_len) {
        if (is_merge && merges < want_merge) {
          take = true;
          ++merges;
        } else if (!is_merge && stays < want_stay && ++stay_tick % stay_stride == 0) {
          take = true;
          ++stays;
        }
      }
      if (take) {
        ++window_id;
        const char* label = is_merge ? "merge" : "non_merge";
        int t0 = t - window_len + 1;
        for (int w = 0; w < window_len; ++w) {
          for (const auto& row : scene_history[w]) {
            csv += std::to_string(window_id) + ',' + std::to_string(t0 + w) + ',' +
                   std::to_string(row.vehicle_id) + ',' + std::to_string(row.lane) + ',' +
                   format_double(row.x) + ',' + format_double(row.v) + ',' +
                   (row.is_ego ? "1" : "0") + ',' + label + '\n';
          }
        }
      }
      env.step(a);
    }
  }
  if (merges < want_merge || stays < want_stay)
    throw std::runtime_error("trajectory dataset: traffic produced too few merge decisions");
  write_text_file(path, csv);
}

namespace {

struct TrajVehicleRow {
  int vehicle_id;
  int lane;
  double x;
  double v;
  bool is_ego;
};

struct TrajWindow {
  int window_id = 0;
  std::string label;
  std::map<int, std::vector<TrajVehicleRow>> by_time;
};

std::vector<TrajWindow> parse_trajectory_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("trajectory dataset: cannot read " + path);
  std::string line;
  if (!std::getline(f, line))
    throw std::runtime_error("trajectory dataset: empty file " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "window_id,t,vehicle_id,lane,x_m,v,is_ego,label")
    throw std::runtime_error("trajectory dataset: unexpected header: " + line);

  std::map<int, TrajWindow> windows;
  std::vector<std::string> errors;
  size_t line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 8) {
      errors.push_back("line " + std::to_string(line_no) + ": expected 8 columns");
      continue;
    }
    try {
      int wid = std::stoi(cells[0]);
      int t = std::stoi(cells[1]);
      TrajVehicleRow row;
      row.vehicle_id = std::stoi(cells[2]);
      row.lane = std::stoi(cells[3]);
      row.x = std::stod(cells[4]);
      row.v = std::stod(cells[5]);
      row.is_ego = cells[6] == "1";
      if (cells[6] != "0" && cells[6] != "1")
        throw std::invalid_argument("is_ego must be 0 or 1");
      if (cells[7] != "merge" && cells[7] != "non_merge")
        throw std::invalid_argument("label must be merge or non_merge");
      TrajWindow& w = windows[wid];
      w.window_id = wid;
      if (w.label.empty())
        w.label = cells[7];
      else if (w.label != cells[7])
        throw std::invalid_argument("conflicting labels inside window");
      w.by_time[t].push_back(row);
    } catch (const std::exception& e) {
      errors.push_back("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!errors.empty()) {
    std::string msg = "trajectory dataset: malformed rows:";
    for (size_t i = 0; i < errors.size() && i < 10; ++i) msg += "\n  " + errors[i];
    throw std::runtime_error(msg);
  }
  if (windows.empty()) throw std::runtime_error("trajectory dataset: no data rows in " + path);

  std::vector<TrajWindow> out;
  out.reserve(windows.size());
  for (auto& [wid, w] : windows) {
    if (static_cast<int>(w.by_time.size()) < 3)
      throw std::runtime_error("trajectory dataset: window " + std::to_string(wid) +
                               " has fewer than 3 timeslots");
    out.push_back(std::move(w));
  }
  return out;
}

}  // namespace

TrajReport eval_trajectories(const std::string& path, const EvalPolicy& policy,
                             const RunConfig& cfg) {
  std::vector<TrajWindow> windows = parse_trajectory_csv(path);
  const sim::EnvConfig& env_cfg = cfg.env;
  const double cell = env_cfg.sensing_range;

  TrajReport report;
  for (const TrajWindow& w : windows) {
    // last three timeslots build the stacked state
    std::vector<int> times;
    for (const auto& [t, rows] : w.by_time) times.push_back(t);
    std::sort(times.begin(), times.end());
    std::vector<int> last3(times.end() - 3, times.end());

    sim::OccupancyState state;
    const TrajVehicleRow* ego_final = nullptr;
    std::vector<TrajVehicleRow> final_rows;
    for (int i = 0; i < 3; ++i) {
      const auto& rows = w.by_time.at(last3[i]);
      const TrajVehicleRow* ego = nullptr;
      for (const auto& r : rows) {
        if (r.is_ego) {
          if (ego)
            throw std::runtime_error("trajectory dataset: window " + std::to_string(w.window_id) +
                                     " has duplicate ego rows at t=" + std::to_string(last3[i]));
          ego = &r;
        }
      }
      if (!ego)
        throw std::runtime_error("trajectory dataset: window " + std::to_string(w.window_id) +
                                 " is missing the ego row at t=" + std::to_string(last3[i]));
      std::vector<uint8_t> occ(sim::OccupancyState::kRows * sim::OccupancyState::kCols, 0);
      for (const auto& r : rows) {
        int off = r.lane - ego->lane;
        if (off < -1 || off > 1) continue;
        sim::mark_block(occ, r.x - ego->x, off, cell);
      }
      state.layers[i] = std::move(occ);
      if (i == 2) {
        ego_final = ego;
        final_rows = rows;
      }
    }
    state.ego_row0 = 10;
    state.ego_row_span =
        std::max(1, static_cast<int>(std::lround(sim::kVehicleLength / cell)));

    // scene queries for the mask / tree at the final timeslot
    sim::EgoView view;
    view.lane = ego_final->lane;
    view.lanes = env_cfg.lanes;
    view.velocity = ego_final->v;
    view.v_min = env_cfg.ego_v_min;
    view.v_max = env_cfg.ego_v_max;
    double d_des = env_cfg.desired_gap();
    bool left_occ = ego_final->lane <= 0;
    bool right_occ = ego_final->lane >= env_cfg.lanes - 1;
    for (const auto& r : final_rows) {
      if (r.is_ego) continue;
      double rel = r.x - ego_final->x;
      if (r.lane == ego_final->lane && rel > 0.0 && rel <= 20.0 * cell) {
        double gap = rel - sim::kVehicleLength;
        if (!view.leader || gap < view.leader->gap)
          view.leader = sim::Leader{r.vehicle_id, gap, r.v};
      }
      bool in_gap = rel + sim::kVehicleLength > -d_des && rel < sim::kVehicleLength + d_des;
      if (r.lane == ego_final->lane - 1 && in_gap) left_occ = true;
      if (r.lane == ego_final->lane + 1 && in_gap) right_occ = true;
    }
    view.left_gap_occupied = left_occ;
    view.right_gap_occupied = right_occ;

    int action;
    switch (policy.kind) {
      case EvalPolicy::Kind::dt:
      case EvalPolicy::Kind::rule: {
        dt::DtObservation obs;
        obs.vehicle_ahead = view.leader.has_value();
        obs.fast_or_following = view.velocity >= policy.high_speed_frac * view.v_max ||
                                (view.leader && view.leader->gap < d_des);
        obs.left_lane_empty = view.lane > 0 && !view.left_gap_occupied;
        obs.right_lane_empty = view.lane < view.lanes - 1 && !view.right_gap_occupied;
        action = dt::dt_decide(obs);
        break;
      }
      case EvalPolicy::Kind::greedy_masked: {
        agent::ActionMask mask = agent::compute_action_mask(view);
        Rng unused(0);
        action = agent::select_action(agent::q_values(*policy.net, state), mask, 0.0, unused);
        break;
      }
      case EvalPolicy::Kind::greedy_unmasked:
        action = agent::unmasked_argmax(agent::q_values(*policy.net, state));
        break;
      case EvalPolicy::Kind::random_masked:
        throw std::invalid_argument("eval_trajectories: random policy is not a predictor");
    }

    bool predicted_merge = action == sim::kLeft || action == sim::kRight;
    bool actual_merge = w.label == "merge";
    if (actual_merge) {
      report.merge_total += 1;
      report.merge_correct += predicted_merge ? 1 : 0;
    } else {
      report.non_merge_total += 1;
      report.non_merge_correct += predicted_merge ? 0 : 1;
    }
  }
  return report;
}

std::vector<std::string> export_run(const std::string& run_dir) {
  if (!fs::is_directory(run_dir))
    throw std::runtime_error("export: no such run directory: " + run_dir);
  bool has_scores = fs::exists(fs::path(run_dir) / "scores.csv");
  bool has_metrics = fs::exists(fs::path(run_dir) / "metrics.csv");
  bool has_sweep = fs::exists(fs::path(run_dir) / "sweep_rows.csv");
  if (!has_scores && !has_metrics && !has_sweep)
    throw std::runtime_error("export: incomplete run (no scores.csv, metrics.csv or sweep_rows.csv): " +
                             run_dir);

  std::vector<std::string> written;
  if (has_scores) {
    // score-over-episodes series (learning-curve axes)
    std::ifstream f(fs::path(run_dir) / "scores.csv");
    std::string line, out = "x,y\n";
    std::getline(f, line);  // header
    while (std::getline(f, line))
      if (!line.empty()) out += line + '\n';
    std::string p = unique_path(run_dir, "plot_score_vs_episode.csv");
    write_text_file(p, out);
    written.push_back(p);
  }
  if (has_sweep) {
    // per-metric series against the first axis (metric-vs-range axes)
    std::ifstream f(fs::path(run_dir) / "sweep_rows.csv");
    std::string header;
    std::getline(f, header);
    std::vector<std::string> cols;
    std::stringstream hs(header);
    std::string c;
    while (std::getline(hs, c, ',')) cols.push_back(c);
    auto col_of = [&](const std::string& name) {
      for (size_t i = 0; i < cols.size(); ++i)
        if (cols[i] == name) return static_cast<int>(i);
      return -1;
    };
    const char* metrics[] = {"sigma", "v_mean", "safety_ratio", "lc_mean"};
    std::string axis = cols.empty() ? "axis" : cols[0];
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      std::vector<std::string> cells;
      std::stringstream ss(line);
      while (std::getline(ss, c, ',')) cells.push_back(c);
      rows.push_back(std::move(cells));
    }
    for (const char* metric : metrics) {
      int mc = col_of(metric);
      if (mc < 0) continue;
      std::string out = "x,y\n";
      for (const auto& r : rows) out += r[0] + ',' + r[mc] + '\n';
      std::string p = unique_path(run_dir, std::string("plot_") + metric + "_vs_" + axis + ".csv");
      write_text_file(p, out);
      written.push_back(p);
    }
  }
  return written;
}

std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string unique_path(const std::string& dir, const std::string& filename) {
  fs::path base = fs::path(dir) / filename;
  if (!fs::exists(base)) return base.string();
  std::string stem = base.stem().string();
  std::string ext = base.extension().string();
  for (int i = 1;; ++i) {
    fs::path cand = fs::path(dir) / (stem + "_" + std::to_string(i) + ext);
    if (!fs::exists(cand)) return cand.string();
  }
}

void write_metrics_csv(const std::string& path, const RunConfig& cfg, const RunMetrics& m) {
  std::string run_id = cfg.fingerprint();
  std::string out = "run_id,baseline,seed,episodes,v_mean,safety_ratio,lc_mean,sigma\n";
  auto sigma_str = [](double sigma, bool inf) {
    return inf ? std::string("inf") : format_double(sigma);
  };
  out += run_id + ',' + baseline_name(cfg.baseline) + ',' + std::to_string(cfg.rng_seed) + ',' +
         std::to_string(m.episodes.size()) + ',' + format_double(m.v_mean) + ',' +
         format_double(m.safety_ratio) + ',' + format_double(m.lc_mean) + ',' +
         sigma_str(m.sigma, m.sigma_inf) + '\n';
  for (const auto& row : m.episodes) {
    double s = row.collided ? 0.0 : 1.0;
    double episode_sigma = decision_efficiency(row.mean_velocity, s, row.lane_changes);
    out += run_id + ',' + baseline_name(cfg.baseline) + ',' + std::to_string(cfg.rng_seed) +
           ",1," + format_double(row.mean_velocity) + ',' + format_double(s) + ',' +
           std::to_string(row.lane_changes) + ',' +
           sigma_str(episode_sigma, std::isinf(episode_sigma)) + '\n';
  }
  write_text_file(path, out);
}

}  // namespace drnet::harness
