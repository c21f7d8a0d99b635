#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "drnet/dt_policy.hpp"
#include "drnet/harness.hpp"
#include "drnet/replay.hpp"
#include "drnet/style.hpp"

namespace fs = std::filesystem;
using namespace drnet;

namespace {

struct GlobalOpts {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::string out_dir;
  std::string baseline;
};

harness::RunConfig resolve_config(const GlobalOpts& g) {
  harness::RunConfig cfg =
      g.config_path.empty() ? harness::desk_scale_config() : harness::load_run_config(g.config_path);
  if (g.seed) cfg.rng_seed = *g.seed;
  if (!g.out_dir.empty()) cfg.out_dir = g.out_dir;
  if (!g.baseline.empty()) cfg.baseline = harness::baseline_from_name(g.baseline);
  cfg.validate();
  return cfg;
}

void print_metrics(const harness::RunMetrics& m) {
  std::cout << "v_mean=" << harness::format_double(m.v_mean)
            << " safety_ratio=" << harness::format_double(m.safety_ratio)
            << " lc_mean=" << harness::format_double(m.lc_mean)
            << " sigma=" << (m.sigma_inf ? "inf" : harness::format_double(m.sigma)) << "\n";
  if (m.sigma_inf) std::cout << "note: no lane changes during evaluation; sigma is unbounded\n";
}

harness::SweepAxis parse_axis(const std::string& spec) {
  auto eq = spec.find('=');
  if (eq == std::string::npos)
    throw std::invalid_argument("axis must look like key=v1,v2,... got: " + spec);
  harness::SweepAxis axis;
  axis.key = spec.substr(0, eq);
  std::stringstream ss(spec.substr(eq + 1));
  std::string cell;
  while (std::getline(ss, cell, ',')) axis.values.push_back(std::stod(cell));
  return axis;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"drnet: safe lane-change decision-making laboratory"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--config", g.config_path, "run configuration JSON (defaults to the desk preset)");
  app.add_option("--seed", g.seed, "override rng_seed");
  app.add_option("--out", g.out_dir, "override output directory");
  app.add_option("--baseline", g.baseline,
                 "drnet | drnet_no_subspace | drnet_no_init | ddqn_plain | rule_based | random");

  auto* cmd_train = app.add_subcommand("train", "run the training loop and write a checkpoint");

  auto* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint (or rule/random baseline)");
  std::string eval_checkpoint;
  int eval_episodes = 0;
  cmd_eval->add_option("--checkpoint", eval_checkpoint, "checkpoint_online.json path");
  cmd_eval->add_option("--episodes", eval_episodes, "override eval episode count");

  auto* cmd_sweep = app.add_subcommand("sweep", "grid of independent seeded trials");
  std::vector<std::string> axis_specs;
  int parallelism = 0;
  cmd_sweep->add_option("--axis", axis_specs, "axis as key=v1,v2,... (repeat up to twice)")
      ->required();
  cmd_sweep->add_option("--parallel", parallelism, "worker threads (default: hardware)");

  auto* cmd_dt = app.add_subcommand("dt-run", "episodes under the plain decision tree");
  int dt_episodes = 5;
  cmd_dt->add_option("--episodes", dt_episodes, "episode count");

  auto* cmd_seed = app.add_subcommand("seed-buffer", "fill a replay buffer from the decision tree");
  int seed_count = 512;
  std::string snapshot_path;
  cmd_seed->add_option("--count", seed_count, "transitions to store");
  cmd_seed->add_option("--snapshot", snapshot_path, "write a buffer snapshot file");

  auto* cmd_traj = app.add_subcommand("traj-eval", "score merge/stay predictions on a window CSV");
  std::string traj_data, traj_checkpoint;
  cmd_traj->add_option("--data", traj_data, "trajectory window CSV")->required();
  cmd_traj->add_option("--checkpoint", traj_checkpoint,
                       "checkpoint_online.json (omit to use the rule policy)");

  auto* cmd_export = app.add_subcommand("export", "re-derive metrics/plot files for a run dir");
  std::string export_dir;
  cmd_export->add_option("--run-dir", export_dir, "run directory (defaults to --out)");

  auto* cmd_style = app.add_subcommand("style-train", "train the driving-style classifier");
  int style_windows = 900;
  std::string style_model_out, style_dataset_out;
  cmd_style->add_option("--windows", style_windows, "trajectory windows to generate");
  cmd_style->add_option("--model-out", style_model_out, "model JSON path");
  cmd_style->add_option("--dataset-out", style_dataset_out, "also write the labeled CSV");

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_train->parsed()) {
      harness::RunConfig cfg = resolve_config(g);
      if (cfg.out_dir.empty()) cfg.out_dir = "runs/" + cfg.fingerprint();
      harness::TrialResult r = harness::run_trial(cfg);
      std::cout << "run " << cfg.fingerprint() << " (" << harness::baseline_name(cfg.baseline)
                << ", seed " << cfg.rng_seed << ")\n";
      std::cout << "references: r_rule=" << harness::format_double(r.train.refs.r_rule)
                << " r_random=" << harness::format_double(r.train.refs.r_random) << "\n";
      if (!r.train.log.empty())
        std::cout << "final episode score: "
                  << harness::format_double(r.train.log.back().score) << "\n";
      print_metrics(r.eval);
      std::cout << "artifacts in " << cfg.out_dir << "\n";
    } else if (cmd_eval->parsed()) {
      harness::RunConfig cfg = resolve_config(g);
      int n = eval_episodes > 0 ? eval_episodes : cfg.eval_episodes;
      harness::EvalPolicy policy;
      nn::Network net;
      if (!eval_checkpoint.empty()) {
        net = nn::Network::load(eval_checkpoint);
        policy.kind = (cfg.baseline == harness::Baseline::drnet_no_subspace ||
                       cfg.baseline == harness::Baseline::ddqn_plain)
                          ? harness::EvalPolicy::Kind::greedy_unmasked
                          : harness::EvalPolicy::Kind::greedy_masked;
        policy.net = &net;
      } else {
        policy.kind = cfg.baseline == harness::Baseline::random
                          ? harness::EvalPolicy::Kind::random_masked
                          : harness::EvalPolicy::Kind::rule;
      }
      policy.high_speed_frac = cfg.dt_high_speed_frac;
      harness::RunMetrics m = harness::evaluate(policy, cfg, n);
      print_metrics(m);
      if (!cfg.out_dir.empty()) {
        fs::create_directories(cfg.out_dir);
        harness::write_metrics_csv(harness::unique_path(cfg.out_dir, "metrics.csv"), cfg, m);
      }
    } else if (cmd_sweep->parsed()) {
      harness::RunConfig cfg = resolve_config(g);
      std::vector<harness::SweepAxis> axes;
      for (const auto& s : axis_specs) axes.push_back(parse_axis(s));
      std::string dir = cfg.out_dir.empty() ? "sweeps" : cfg.out_dir;
      harness::SweepResult r = harness::sweep(cfg, axes, dir, parallelism);
      std::cout << "cells: " << r.cells.size() << "\nrows: " << r.rows_csv_path << "\n";
      if (!r.pivot_csv_path.empty()) std::cout << "grid: " << r.pivot_csv_path << "\n";
    } else if (cmd_dt->parsed()) {
      harness::RunConfig cfg = resolve_config(g);
      harness::EvalPolicy dt{harness::EvalPolicy::Kind::dt, nullptr, cfg.dt_high_speed_frac};
      harness::RunMetrics m = harness::evaluate(dt, cfg, dt_episodes);
      print_metrics(m);
    } else if (cmd_seed->parsed()) {
      harness::RunConfig cfg = resolve_config(g);
      replay::ReplayBuffer buffer(cfg.buffer_size, cfg.priority_alpha, cfg.priority_floor);
      Rng seeder(cfg.rng_seed);
      size_t n = dt::seed_buffer(cfg.env, buffer, static_cast<size_t>(seed_count), seeder,
                                 cfg.dt_high_speed_frac);
      std::cout << "stored " << n << " transitions (buffer size " << buffer.size() << ")\n";
      if (!snapshot_path.empty()) {
        buffer.save_snapshot(snapshot_path);
        std::cout << "snapshot: " << snapshot_path << "\n";
      }
    } else if (cmd_traj->parsed()) {
      harness::RunConfig cfg = resolve_config(g);
      harness::EvalPolicy policy;
      nn::Network net;
      if (!traj_checkpoint.empty()) {
        net = nn::Network::load(traj_checkpoint);
        policy.kind = harness::EvalPolicy::Kind::greedy_masked;
        policy.net = &net;
      } else {
        policy.kind = harness::EvalPolicy::Kind::rule;
      }
      policy.high_speed_frac = cfg.dt_high_speed_frac;
      harness::TrajReport report = harness::eval_trajectories(traj_data, policy, cfg);
      std::cout << report.to_table();
    } else if (cmd_export->parsed()) {
      std::string dir = !export_dir.empty() ? export_dir : g.out_dir;
      if (dir.empty()) throw std::invalid_argument("export: pass --run-dir or --out");
      for (const auto& p : harness::export_run(dir)) std::cout << "wrote " << p << "\n";
    } else if (cmd_style->parsed()) {
      harness::RunConfig cfg = resolve_config(g);
      Rng rng(cfg.rng_seed);
      auto data = style::generate_style_dataset(cfg.env, static_cast<size_t>(style_windows), 60, rng);
      std::vector<style::StyleFeatures> feats;
      std::vector<int> labels;
      for (const auto& w : data) {
        feats.push_back(w.features);
        labels.push_back(w.label);
      }
      style::StyleModel model = style::train_svm(feats, labels);
      int correct = 0;
      for (const auto& w : data)
        if (static_cast<int>(style::classify(model, w.features)) == w.label) ++correct;
      std::cout << "training accuracy: " << harness::format_double(100.0 * correct / data.size())
                << "% over " << data.size() << " windows\n";
      if (!style_dataset_out.empty()) style::save_dataset_csv(data, style_dataset_out);
      if (!style_model_out.empty()) {
        model.save(style_model_out);
        std::cout << "model: " << style_model_out << "\n";
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
