#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "drnet/rng.hpp"
#include "drnet/sim.hpp"

namespace drnet::style {

inline constexpr int kMinWindow = 20;  // timeslots required by the extractor

// Behavioral features of one observed vehicle over a trajectory window.
struct StyleFeatures {
  double rel_speed = 0.0;   // mean velocity minus mean traffic velocity, km/h
  double min_gap = 0.0;     // smallest accepted bumper gap, meters
  double lc_freq = 0.0;     // lane changes per 100 timeslots
  double brake_rate = 0.0;  // deceleration events per 100 timeslots

  std::array<double, 4> to_array() const { return {rel_speed, min_gap, lc_freq, brake_rate}; }
};

// One timeslot of an observed trajectory.
struct TrajPoint {
  int lane = 0;
  double position = 0.0;
  double velocity = 0.0;
  double traffic_mean_v = 0.0;
  std::optional<double> leader_gap;
};

// Cap applied when a window never has a leader in range; keeps min_gap finite.
inline constexpr double kNoLeaderGapCap = 60.0;

StyleFeatures extract_style_features(const std::vector<TrajPoint>& window);

double rbf_kernel(const std::vector<double>& a, const std::vector<double>& b, double sigma);

// One binary max-margin model in dual form.
struct SvmModel {
  std::vector<std::vector<double>> support_x;
  std::vector<double> support_y;      // +1 / -1
  std::vector<double> support_alpha;  // in (0, C]
  double bias = 0.0;
  double sigma = 1.0;

  double decision(const std::vector<double>& x) const;
};

// One-vs-rest ensemble over the three styles, with the feature
// standardization constants baked in at training time.
struct StyleModel {
  std::array<SvmModel, 3> per_class;  // index = DrivingStyle
  std::vector<double> feat_mean, feat_std;
  double c = 1.0;
  double sigma = 1.0;

  std::vector<double> standardize(const StyleFeatures& f) const;

  std::string to_json() const;
  static StyleModel from_json(const std::string& text);
  void save(const std::string& path) const;
  static StyleModel load(const std::string& path);
};

// Pairwise-optimization dual solver to KKT tolerance 1e-3; labels are style
// indices 0..2 and at least two classes must be present.
StyleModel train_svm(const std::vector<StyleFeatures>& samples, const std::vector<int>& labels,
                     double c = 1.0, double sigma = 1.0);

// Largest one-vs-rest decision value; exact ties resolve to normal.
sim::DrivingStyle classify(const StyleModel& model, const StyleFeatures& f);

struct LabeledWindow {
  StyleFeatures features;
  int label = 0;  // DrivingStyle index
};

// Simulates traffic (rule-driven ego) and slices every participant's
// trajectory into fixed-length windows labeled with its spawn style.
std::vector<LabeledWindow> generate_style_dataset(const sim::EnvConfig& env_cfg, size_t n_windows,
                                                  int window_len, Rng& rng);

// CSV with header rel_speed,min_gap,lc_freq,brake_rate,label
void save_dataset_csv(const std::vector<LabeledWindow>& data, const std::string& path);
std::vector<LabeledWindow> load_dataset_csv(const std::string& path);

// Symmetric-matrix eigenvalues by cyclic Jacobi rotations; used for kernel
// positive-semidefiniteness checks.
std::vector<double> symmetric_eigenvalues(std::vector<std::vector<double>> m);

// Feeds classifier output into the environment's optional style layer.
// Maintains a rolling trajectory window per participant and re-labels a
// vehicle whenever a full window is available; until then the layer shows
// nothing for that vehicle.
class StyleAnnotator {
 public:
  StyleAnnotator(const StyleModel& model, int window_len = 2 * kMinWindow);

  // Call once per timeslot before reading env.state().
  void update(sim::Env& env);

  int classified_count() const { return classified_; }

 private:
  const StyleModel& model_;
  int window_len_;
  int classified_ = 0;
  std::vector<std::vector<TrajPoint>> history_;  // by vehicle id
  std::vector<int> codes_;                       // 0 unknown, 1..3 styles
};

}  // namespace drnet::style
