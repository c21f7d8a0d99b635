#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>

#include "drnet/harness.hpp"
#include "json.hpp"

namespace drnet::harness {

namespace {

using nlohmann::json;

void reject_unknown_keys(const json& obj, const std::set<std::string>& allowed,
                         const std::string& scope) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key()))
      throw std::invalid_argument("config: unknown key '" +
                                  (scope.empty() ? it.key() : scope + "." + it.key()) + "'");
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

template <typename T>
void read_optional(const json& obj, const char* key, std::optional<T>& out) {
  if (obj.contains(key)) {
    if (obj.at(key).is_null())
      out.reset();
    else
      out = obj.at(key).get<T>();
  }
}

void parse_env(const json& j, sim::EnvConfig& env) {
  reject_unknown_keys(j, {"lanes", "lane_densities", "participant_count", "episode_length_m",
                          "sensing_range", "ego_v_min", "ego_v_max", "participant_v_min",
                          "participant_v_max", "desired_speed", "beta_freq", "ego_style",
                          "desired_gap_m", "speed_step", "lambda_collision", "lambda_distance",
                          "lambda_efficiency", "style_layer"},
                      "env");
  read(j, "lanes", env.lanes);
  read(j, "lane_densities", env.lane_densities);
  read_optional(j, "participant_count", env.participant_count);
  read(j, "episode_length_m", env.episode_length_m);
  read(j, "sensing_range", env.sensing_range);
  read(j, "ego_v_min", env.ego_v_min);
  read(j, "ego_v_max", env.ego_v_max);
  read(j, "participant_v_min", env.participant_v_min);
  read(j, "participant_v_max", env.participant_v_max);
  read(j, "desired_speed", env.desired_speed);
  read(j, "beta_freq", env.beta_freq);
  if (j.contains("ego_style")) env.ego_style = sim::style_from_name(j.at("ego_style"));
  read_optional(j, "desired_gap_m", env.desired_gap_m);
  read(j, "speed_step", env.speed_step);
  read(j, "lambda_collision", env.lambda_collision);
  read_optional(j, "lambda_distance", env.lambda_distance);
  read_optional(j, "lambda_efficiency", env.lambda_efficiency);
  read(j, "style_layer", env.style_layer);
}

void parse_agent(const json& j, agent::AgentConfig& a) {
  reject_unknown_keys(j, {"discount", "learning_rate", "soft_update_tau", "minibatch",
                          "replay_period", "epsilon_start", "epsilon_min", "epsilon_decay",
                          "episode_budget", "target_hard_copy_period"},
                      "agent");
  read(j, "discount", a.discount);
  read(j, "learning_rate", a.learning_rate);
  read(j, "soft_update_tau", a.soft_update_tau);
  read(j, "minibatch", a.minibatch);
  read(j, "replay_period", a.replay_period);
  read(j, "epsilon_start", a.epsilon_start);
  read(j, "epsilon_min", a.epsilon_min);
  read(j, "epsilon_decay", a.epsilon_decay);
  read(j, "episode_budget", a.episode_budget);
  read_optional(j, "target_hard_copy_period", a.target_hard_copy_period);
}

void parse_network(const json& j, nn::NetworkSpec& n) {
  reject_unknown_keys(
      j, {"conv_layers", "conv_channels", "conv_kernel", "conv_strides", "dense_units"},
      "network");
  read(j, "conv_layers", n.conv_layers);
  read(j, "conv_channels", n.conv_channels);
  read(j, "conv_kernel", n.conv_kernel);
  read(j, "conv_strides", n.conv_strides);
  read(j, "dense_units", n.dense_units);
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("config: top level must be an object");
  reject_unknown_keys(j, {"env", "agent", "network", "buffer_size", "seed_transitions",
                          "episodes", "eval_episodes", "reference_episodes", "priority_alpha",
                          "priority_floor", "dt_high_speed_frac", "baseline", "rng_seed",
                          "out_dir"},
                      "");

  RunConfig cfg;
  if (j.contains("env")) parse_env(j.at("env"), cfg.env);
  if (j.contains("agent")) parse_agent(j.at("agent"), cfg.agent);
  if (j.contains("network")) parse_network(j.at("network"), cfg.network);
  if (j.contains("buffer_size")) cfg.buffer_size = j.at("buffer_size").get<size_t>();
  read(j, "seed_transitions", cfg.seed_transitions);
  read(j, "episodes", cfg.episodes);
  read(j, "eval_episodes", cfg.eval_episodes);
  read(j, "reference_episodes", cfg.reference_episodes);
  read(j, "priority_alpha", cfg.priority_alpha);
  read(j, "priority_floor", cfg.priority_floor);
  read(j, "dt_high_speed_frac", cfg.dt_high_speed_frac);
  if (j.contains("baseline")) cfg.baseline = baseline_from_name(j.at("baseline"));
  read(j, "rng_seed", cfg.rng_seed);
  read(j, "out_dir", cfg.out_dir);

  cfg.network.input_layers = cfg.env.style_layer ? 4 : 3;
  cfg.network.learning_rate = cfg.agent.learning_rate;
  cfg.network.normalize();
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("config: cannot read " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_run_config(ss.str());
}

std::string RunConfig::canonical_json() const {
  json j;
  j["env"] = {{"lanes", env.lanes},
              {"lane_densities", env.lane_densities},
              {"participant_count",
               env.participant_count ? json(*env.participant_count) : json(nullptr)},
              {"episode_length_m", env.episode_length_m},
              {"sensing_range", env.sensing_range},
              {"ego_v_min", env.ego_v_min},
              {"ego_v_max", env.ego_v_max},
              {"participant_v_min", env.participant_v_min},
              {"participant_v_max", env.participant_v_max},
              {"desired_speed", env.desired_speed},
              {"beta_freq", env.beta_freq},
              {"ego_style", sim::style_name(env.ego_style)},
              {"desired_gap_m", env.desired_gap_m ? json(*env.desired_gap_m) : json(nullptr)},
              {"speed_step", env.speed_step},
              {"lambda_collision", env.lambda_collision},
              {"lambda_distance", env.lambda_distance ? json(*env.lambda_distance) : json(nullptr)},
              {"lambda_efficiency",
               env.lambda_efficiency ? json(*env.lambda_efficiency) : json(nullptr)},
              {"style_layer", env.style_layer}};
  j["agent"] = {{"discount", agent.discount},
                {"learning_rate", agent.learning_rate},
                {"soft_update_tau", agent.soft_update_tau},
                {"minibatch", agent.minibatch},
                {"replay_period", agent.replay_period},
                {"epsilon_start", agent.epsilon_start},
                {"epsilon_min", agent.epsilon_min},
                {"epsilon_decay", agent.epsilon_decay},
                {"episode_budget", agent.episode_budget},
                {"target_hard_copy_period", agent.target_hard_copy_period
                                                ? json(*agent.target_hard_copy_period)
                                                : json(nullptr)}};
  nn::NetworkSpec spec = network;
  spec.normalize();
  j["network"] = {{"conv_layers", spec.conv_layers},
                  {"conv_channels", spec.conv_channels},
                  {"conv_kernel", spec.conv_kernel},
                  {"conv_strides", spec.conv_strides},
                  {"dense_units", spec.dense_units}};
  j["buffer_size"] = buffer_size;
  j["seed_transitions"] = seed_transitions;
  j["episodes"] = episodes;
  j["eval_episodes"] = eval_episodes;
  j["reference_episodes"] = reference_episodes;
  j["priority_alpha"] = priority_alpha;
  j["priority_floor"] = priority_floor;
  j["dt_high_speed_frac"] = dt_high_speed_frac;
  j["baseline"] = baseline_name(baseline);
  j["rng_seed"] = rng_seed;
  return j.dump(2);
}

RunConfig desk_scale_config() {
  RunConfig cfg;
  cfg.env.episode_length_m = 2000.0;
  cfg.env.sensing_range = 2.25;
  // closures stay brakeable inside the sensed window, and cruising at the
  // cap is exactly the desired speed, so the grid-only state suffices
  cfg.env.ego_v_max = 60.0;
  cfg.env.desired_speed = 60.0;
  cfg.env.participant_v_min = 45.0;
  // collisions must dominate any per-step friction an episode can save by
  // ending early, or early crashes would read as high scores
  cfg.env.lambda_collision = 20.0;
  cfg.agent.episode_budget = 1200;
  cfg.agent.epsilon_decay = 0.999;
  cfg.agent.learning_rate = 0.002;
  cfg.agent.replay_period = 1;
  cfg.network.conv_layers = 3;
  cfg.network.conv_channels = {8, 8, 8};
  cfg.network.conv_strides = {2, 2, 1};
  cfg.network.dense_units = 48;
  cfg.buffer_size = 20000;
  cfg.seed_transitions = 512;
  cfg.episodes = 50;
  cfg.eval_episodes = 20;
  cfg.reference_episodes = 20;
  return cfg;
}

}  // namespace drnet::harness
