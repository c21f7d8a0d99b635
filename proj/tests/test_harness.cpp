#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "drnet/harness.hpp"

using namespace drnet;
using harness::Baseline;
using harness::RunConfig;
namespace fs = std::filesystem;

namespace {

// a minute-scale config for end-to-end paths
RunConfig micro_config(uint64_t seed, Baseline baseline = Baseline::drnet) {
  RunConfig cfg = harness::desk_scale_config();
  cfg.env.participant_count.reset();  // rederive for the short road
  cfg.env.episode_length_m = 400.0;
  cfg.agent.episode_budget = 200;
  cfg.network.conv_channels = {4, 4, 4};
  cfg.network.dense_units = 16;
  cfg.buffer_size = 2000;
  cfg.seed_transitions = 64;
  cfg.episodes = 2;
  cfg.eval_episodes = 2;
  cfg.reference_episodes = 3;
  cfg.baseline = baseline;
  cfg.rng_seed = seed;
  return cfg;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("normalized_score endpoints and midpoint") {
  CHECK(harness::normalized_score(-20.0, -20.0, -80.0) == 1.0);
  CHECK(harness::normalized_score(-80.0, -20.0, -80.0) == 0.0);
  CHECK(harness::normalized_score(-50.0, -20.0, -80.0) == 0.5);
  CHECK_THROWS_AS(harness::normalized_score(0.0, -5.0, -5.0), std::invalid_argument);
}

TEST_CASE("decision efficiency: arithmetic, all-collide, and no-lane-change cases") {
  CHECK(harness::decision_efficiency(60.0, 0.9, 30.0) == doctest::Approx(1.8).epsilon(1e-12));
  CHECK(harness::decision_efficiency(60.0, 0.0, 30.0) == 0.0);
  CHECK(std::isinf(harness::decision_efficiency(60.0, 1.0, 0.0)));
}

TEST_CASE("config JSON: defaults, overrides, and strict key checking") {
  RunConfig cfg = harness::parse_run_config(R"({
    "env": {"episode_length_m": 900, "sensing_range": 1.5},
    "agent": {"discount": 0.9},
    "episodes": 3,
    "baseline": "rule_based",
    "rng_seed": 17
  })");
  CHECK(cfg.env.episode_length_m == 900.0);
  CHECK(cfg.agent.discount == 0.9);
  CHECK(cfg.episodes == 3);
  CHECK(cfg.baseline == Baseline::rule_based);
  CHECK(cfg.rng_seed == 17);
  CHECK(cfg.buffer_size == 500000);  // untouched default

  CHECK_THROWS_WITH_AS(harness::parse_run_config(R"({"episodez": 3})"),
                       doctest::Contains("unknown key 'episodez'"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(harness::parse_run_config(R"({"env": {"lanez": 4}})"),
                       doctest::Contains("env.lanez"), std::invalid_argument);
  CHECK_THROWS_AS(harness::parse_run_config("{nonsense"), std::invalid_argument);
  CHECK_THROWS_AS(harness::parse_run_config(R"({"baseline": "sota"})"), std::invalid_argument);
}

TEST_CASE("rule policy backs off behind a close leader and tracks the target speed") {
  sim::EnvConfig cfg;
  cfg.participant_count = 0;
  cfg.episode_length_m = 5000.0;
  cfg.rng_seed = 12;
  sim::Env env(cfg);
  // clear road: accelerate up to the desired speed and then hold
  for (int t = 0; t < 40; ++t) env.step(harness::rule_decide(env));
  CHECK(env.ego_velocity() == cfg.desired_speed);
  CHECK(harness::rule_decide(env) == sim::kStay);
}

TEST_CASE("references put the rule policy clearly above masked-random") {
  RunConfig cfg = micro_config(5);
  cfg.env.episode_length_m = 800.0;
  cfg.reference_episodes = 5;
  harness::References refs = harness::measure_references(cfg);
  CHECK(refs.r_rule > refs.r_random);
}

TEST_CASE("rule_based baseline trains nothing and logs its episodes") {
  RunConfig cfg = micro_config(7, Baseline::rule_based);
  harness::TrainResult r = harness::train(cfg);
  CHECK_FALSE(r.trained);
  CHECK(r.train_steps == 0);
  REQUIRE(static_cast<int>(r.log.size()) == cfg.episodes);
  for (const auto& row : r.log) CHECK(row.steps > 0);
  // the rule baseline scores ~1 against its own reference policy
  double mean = 0.0;
  for (const auto& row : r.log) mean += row.score;
  mean /= r.log.size();
  CHECK(mean == doctest::Approx(1.0).epsilon(0.75));
}

TEST_CASE("drnet_no_init starts from an empty buffer; drnet starts seeded") {
  RunConfig seeded = micro_config(9, Baseline::drnet);
  harness::TrainResult a = harness::train(seeded);
  CHECK(a.initial_buffer_size == static_cast<size_t>(seeded.seed_transitions));

  RunConfig bare = micro_config(9, Baseline::drnet_no_init);
  harness::TrainResult b = harness::train(bare);
  CHECK(b.initial_buffer_size == 0);
  CHECK(b.trained);
}

TEST_CASE("fixed seed reproduces training logs and metrics byte-identically") {
  TempDir dir_a("drnet_test_run_a");
  TempDir dir_b("drnet_test_run_b");
  RunConfig a = micro_config(11);
  a.out_dir = dir_a.path.string();
  RunConfig b = micro_config(11);
  b.out_dir = dir_b.path.string();

  harness::run_trial(a);
  harness::run_trial(b);

  for (const char* name : {"training_log.csv", "scores.csv", "metrics.csv"})
    CHECK(slurp((dir_a.path / name).string()) == slurp((dir_b.path / name).string()));

  // different seed produces a different trace
  TempDir dir_c("drnet_test_run_c");
  RunConfig c = micro_config(12);
  c.out_dir = dir_c.path.string();
  harness::run_trial(c);
  CHECK(slurp((dir_a.path / "training_log.csv").string()) !=
        slurp((dir_c.path / "training_log.csv").string()));
}

TEST_CASE("metrics.csv: aggregate row, per-episode rows, and recomputable sigma") {
  TempDir dir("drnet_test_metrics");
  RunConfig cfg = micro_config(13, Baseline::rule_based);
  cfg.eval_episodes = 4;
  cfg.out_dir = dir.path.string();
  harness::TrialResult r = harness::run_trial(cfg);

  std::string csv = slurp((dir.path / "metrics.csv").string());
  std::stringstream ss(csv);
  std::string line;
  std::getline(ss, line);
  CHECK(line == "run_id,baseline,seed,episodes,v_mean,safety_ratio,lc_mean,sigma");
  std::vector<std::vector<std::string>> rows;
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    REQUIRE(cells.size() == 8);
    rows.push_back(cells);
  }
  REQUIRE(static_cast<int>(rows.size()) == 1 + cfg.eval_episodes);  // aggregate + per-episode
  CHECK(rows[0][3] == std::to_string(cfg.eval_episodes));
  for (const auto& cells : rows) {
    if (cells[7] == "inf") continue;
    double v = std::stod(cells[4]), s = std::stod(cells[5]), lc = std::stod(cells[6]);
    double sigma = std::stod(cells[7]);
    double expect = harness::decision_efficiency(v, s, lc);
    CHECK(sigma == doctest::Approx(expect).epsilon(1e-9));
  }
  CHECK(r.eval.episodes.size() == static_cast<size_t>(cfg.eval_episodes));
}

TEST_CASE("unique_path never clobbers") {
  TempDir dir("drnet_test_clobber");
  std::string first = harness::unique_path(dir.path.string(), "metrics.csv");
  std::ofstream(first) << "x";
  std::string second = harness::unique_path(dir.path.string(), "metrics.csv");
  CHECK(first != second);
  CHECK(second.find("metrics_1.csv") != std::string::npos);
  std::ofstream(second) << "y";
  std::string third = harness::unique_path(dir.path.string(), "metrics.csv");
  CHECK(third.find("metrics_2.csv") != std::string::npos);
}

TEST_CASE("scores.csv carries one row per training episode") {
  TempDir dir("drnet_test_scores");
  RunConfig cfg = micro_config(15, Baseline::random);
  cfg.episodes = 5;
  cfg.out_dir = dir.path.string();
  harness::train(cfg);
  std::string csv = slurp((dir.path / "scores.csv").string());
  int lines = 0;
  for (char ch : csv)
    if (ch == '\n') ++lines;
  CHECK(lines == 1 + cfg.episodes);  // header + M rows
}

TEST_CASE("sweep: unknown axis rejected before any run; degenerate cell equals plain run") {
  RunConfig base = micro_config(21, Baseline::rule_based);
  TempDir dir("drnet_test_sweep");
  CHECK_THROWS_WITH_AS(
      harness::sweep(base, {{"warp_factor", {1, 2}}}, dir.path.string(), 1),
      doctest::Contains("unknown axis"), std::invalid_argument);

  harness::SweepResult r =
      harness::sweep(base, {{"discount", {base.agent.discount}}}, dir.path.string(), 1);
  REQUIRE(r.cells.size() == 1);
  harness::TrialResult plain = harness::run_trial(base);
  CHECK(r.cells[0].metrics.sigma == plain.eval.sigma);
  CHECK(r.cells[0].metrics.v_mean == plain.eval.v_mean);
  CHECK(r.cells[0].seed == base.rng_seed);
}

TEST_CASE("sweep grid: cell count, row fingerprints, pivot shape") {
  RunConfig base = micro_config(23, Baseline::rule_based);
  TempDir dir("drnet_test_sweep_grid");
  harness::SweepResult r = harness::sweep(
      base, {{"discount", {0.9, 0.93}}, {"buffer_size", {1000, 2000, 3000}}}, dir.path.string(), 2);
  CHECK(r.cells.size() == 6);

  std::string rows = slurp(r.rows_csv_path);
  int data_rows = -1;  // discount the header
  for (size_t pos = 0; (pos = rows.find('\n', pos)) != std::string::npos; ++pos) ++data_rows;
  CHECK(data_rows == 6);
  CHECK(rows.find("discount,buffer_size,run_id") == 0);
  // every row carries a 16-hex fingerprint column
  std::stringstream ss(rows);
  std::string line;
  std::getline(ss, line);
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    auto last = line.rfind(',');
    CHECK(line.size() - last - 1 == 16);
  }

  std::string pivot = slurp(r.pivot_csv_path);
  std::stringstream ps(pivot);
  int pivot_lines = 0;
  while (std::getline(ps, line)) ++pivot_lines;
  CHECK(pivot_lines == 3);  // header + one row per discount value
}

TEST_CASE("trajectory dataset: generation, self-consistent evaluation, error paths") {
  TempDir dir("drnet_test_traj");
  RunConfig cfg;  // default (paper-style) participant speeds
  cfg.env.episode_length_m = 800.0;
  cfg.env.lane_densities = {0.3, 0.5, 0.7};
  std::string path = (dir.path / "windows.csv").string();
  Rng rng(31);
  harness::generate_trajectory_dataset(cfg.env, 24, 4, path, rng, cfg.dt_high_speed_frac);

  harness::EvalPolicy dt_policy{harness::EvalPolicy::Kind::dt, nullptr, cfg.dt_high_speed_frac};
  harness::TrajReport report = harness::eval_trajectories(path, dt_policy, cfg);
  CHECK(report.merge_total == 12);
  CHECK(report.non_merge_total == 12);
  CHECK(report.merge_correct == report.merge_total);
  CHECK(report.non_merge_correct == report.non_merge_total);

  std::string table = report.to_table();
  CHECK(table.find("non_merge,") != std::string::npos);
  CHECK(table.find("merge,") != std::string::npos);

  SUBCASE("empty dataset is an error, not zero accuracy") {
    std::string empty = (dir.path / "empty.csv").string();
    std::ofstream(empty) << "window_id,t,vehicle_id,lane,x_m,v,is_ego,label\n";
    CHECK_THROWS_WITH_AS(harness::eval_trajectories(empty, dt_policy, cfg),
                         doctest::Contains("no data rows"), std::runtime_error);
  }
  SUBCASE("malformed rows are reported with line numbers") {
    std::string bad = (dir.path / "bad.csv").string();
    std::ofstream(bad) << "window_id,t,vehicle_id,lane,x_m,v,is_ego,label\n"
                       << "1,0,0,1,0,50,1,merge\n"
                       << "1,0,oops,1\n";
    CHECK_THROWS_WITH_AS(harness::eval_trajectories(bad, dt_policy, cfg),
                         doctest::Contains("line 3"), std::runtime_error);
  }
  SUBCASE("a window without ego rows is rejected") {
    std::string noego = (dir.path / "noego.csv").string();
    std::ofstream f(noego);
    f << "window_id,t,vehicle_id,lane,x_m,v,is_ego,label\n";
    for (int t = 0; t < 3; ++t) f << "1," << t << ",5,1,12,40,0,non_merge\n";
    f.close();
    CHECK_THROWS_WITH_AS(harness::eval_trajectories(noego, dt_policy, cfg),
                         doctest::Contains("missing the ego row"), std::runtime_error);
  }
}

TEST_CASE("export writes plot data and refuses incomplete directories") {
  TempDir dir("drnet_test_export");
  CHECK_THROWS_WITH_AS(harness::export_run(dir.path.string()), doctest::Contains("incomplete"),
                       std::runtime_error);

  RunConfig cfg = micro_config(33, Baseline::random);
  cfg.out_dir = dir.path.string();
  harness::run_trial(cfg);
  std::vector<std::string> written = harness::export_run(dir.path.string());
  REQUIRE_FALSE(written.empty());
  std::string plot = slurp(written[0]);
  CHECK(plot.rfind("x,y\n", 0) == 0);

  // exporting twice suffixes instead of overwriting
  std::vector<std::string> again = harness::export_run(dir.path.string());
  CHECK(again[0] != written[0]);
}

TEST_CASE("drnet end-to-end micro training runs and evaluates under the mask") {
  RunConfig cfg = micro_config(41);
  harness::TrialResult r = harness::run_trial(cfg);
  CHECK(r.train.trained);
  CHECK(r.train.train_steps > 0);
  CHECK(r.eval.mask_violations == 0);
  CHECK(r.eval.lane_violations == 0);
  CHECK(static_cast<int>(r.train.log.size()) == cfg.episodes);
}

TEST_CASE("ddqn_plain trains unmasked with uniform replay") {
  RunConfig cfg = micro_config(43, Baseline::ddqn_plain);
  harness::TrialResult r = harness::run_trial(cfg);
  CHECK(r.train.trained);
  CHECK(r.train.initial_buffer_size == 0);
  CHECK(r.train.negative_samples == 0);
}

TEST_CASE("run_batch preserves order and matches sequential trials") {
  std::vector<RunConfig> configs = {micro_config(51, Baseline::rule_based),
                                    micro_config(52, Baseline::random)};
  std::vector<harness::TrialResult> batch = harness::run_batch(configs, 2);
  harness::TrialResult solo = harness::run_trial(configs[0]);
  CHECK(batch[0].eval.sigma == solo.eval.sigma);
  CHECK(batch[0].eval.v_mean == solo.eval.v_mean);
  CHECK(batch.size() == 2);
}

TEST_CASE("canonical config fingerprints are stable and sensitive") {
  RunConfig a = micro_config(61);
  RunConfig b = micro_config(61);
  CHECK(a.fingerprint() == b.fingerprint());
  b.agent.discount = 0.91;
  CHECK(a.fingerprint() != b.fingerprint());
}
