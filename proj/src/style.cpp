#include "drnet/style.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace drnet::style {

StyleFeatures extract_style_features(const std::vector<TrajPoint>& window) {
  if (static_cast<int>(window.size()) < kMinWindow)
    throw std::invalid_argument("style: trajectory window shorter than " +
                                std::to_string(kMinWindow) + " timeslots");
  StyleFeatures f;
  double rel_sum = 0.0;
  double min_gap = kNoLeaderGapCap;
  int lane_changes = 0;
  int brakes = 0;
  for (size_t i = 0; i < window.size(); ++i) {
    const TrajPoint& p = window[i];
    rel_sum += p.velocity - p.traffic_mean_v;
    if (p.leader_gap) min_gap = std::min(min_gap, std::max(0.0, *p.leader_gap));
    if (i > 0) {
      if (p.lane != window[i - 1].lane) ++lane_changes;
      if (p.velocity < window[i - 1].velocity - 1e-9) ++brakes;
    }
  }
  double n = static_cast<double>(window.size());
  f.rel_speed = rel_sum / n;
  f.min_gap = min_gap;
  f.lc_freq = 100.0 * lane_changes / n;
  f.brake_rate = 100.0 * brakes / n;
  return f;
}

double rbf_kernel(const std::vector<double>& a, const std::vector<double>& b, double sigma) {
  if (a.size() != b.size()) throw std::invalid_argument("rbf_kernel: dimension mismatch");
  if (sigma <= 0.0) throw std::invalid_argument("rbf_kernel: sigma must be positive");
  double d2 = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    d2 += d * d;
  }
  return std::exp(-d2 / (2.0 * sigma * sigma));
}

double SvmModel::decision(const std::vector<double>& x) const {
  double f = bias;
  for (size_t i = 0; i < support_x.size(); ++i)
    f += support_alpha[i] * support_y[i] * rbf_kernel(support_x[i], x, sigma);
  return f;
}

std::vector<double> StyleModel::standardize(const StyleFeatures& f) const {
  auto raw = f.to_array();
  std::vector<double> z(raw.size());
  for (size_t i = 0; i < raw.size(); ++i) z[i] = (raw[i] - feat_mean[i]) / feat_std[i];
  return z;
}

namespace {

// Sequential pairwise optimization (Platt-style, deterministic) on a
// precomputed kernel matrix, with an incrementally maintained error cache.
struct BinarySvm {
  std::vector<double> alpha;
  double bias = 0.0;
};

BinarySvm smo_solve(const std::vector<std::vector<double>>& kernel, const std::vector<double>& y,
                    double c, double kkt_tol) {
  const size_t n = y.size();
  BinarySvm m;
  m.alpha.assign(n, 0.0);
  std::vector<double> err(n);
  for (size_t i = 0; i < n; ++i) err[i] = -y[i];  // f = 0 initially

  long steps_left = 2000 * static_cast<long>(n);

  auto take_step = [&](size_t i, size_t j) -> bool {
    if (i == j) return false;
    double lo, hi;
    if (y[i] != y[j]) {
      lo = std::max(0.0, m.alpha[j] - m.alpha[i]);
      hi = std::min(c, c + m.alpha[j] - m.alpha[i]);
    } else {
      lo = std::max(0.0, m.alpha[i] + m.alpha[j] - c);
      hi = std::min(c, m.alpha[i] + m.alpha[j]);
    }
    if (lo >= hi) return false;
    double eta = 2.0 * kernel[i][j] - kernel[i][i] - kernel[j][j];
    if (eta >= -1e-12) return false;

    double ai_old = m.alpha[i], aj_old = m.alpha[j];
    double aj = std::clamp(aj_old - y[j] * (err[i] - err[j]) / eta, lo, hi);
    if (std::fabs(aj - aj_old) < 1e-8 * (aj + aj_old + 1e-8)) return false;
    double ai = ai_old + y[i] * y[j] * (aj_old - aj);

    double b1 = m.bias - err[i] - y[i] * (ai - ai_old) * kernel[i][i] -
                y[j] * (aj - aj_old) * kernel[i][j];
    double b2 = m.bias - err[j] - y[i] * (ai - ai_old) * kernel[i][j] -
                y[j] * (aj - aj_old) * kernel[j][j];
    double b_new;
    if (ai > 0.0 && ai < c)
      b_new = b1;
    else if (aj > 0.0 && aj < c)
      b_new = b2;
    else
      b_new = 0.5 * (b1 + b2);

    double di = y[i] * (ai - ai_old), dj = y[j] * (aj - aj_old), db = b_new - m.bias;
    for (size_t k = 0; k < n; ++k) err[k] += di * kernel[i][k] + dj * kernel[j][k] + db;
    m.alpha[i] = ai;
    m.alpha[j] = aj;
    m.bias = b_new;
    return true;
  };

  auto examine = [&](size_t i) -> bool {
    double r = err[i] * y[i];
    bool violates = (r < -kkt_tol && m.alpha[i] < c) || (r > kkt_tol && m.alpha[i] > 0.0);
    if (!violates) return false;

    // partner with the largest error gap among non-bound points
    size_t best = i;
    double best_gap = -1.0;
    for (size_t j = 0; j < n; ++j) {
      if (j == i || m.alpha[j] <= 0.0 || m.alpha[j] >= c) continue;
      double gap = std::fabs(err[i] - err[j]);
      if (gap > best_gap) {
        best_gap = gap;
        best = j;
      }
    }
    if (best != i && take_step(i, best)) return true;
    // fall back to a deterministic sweep from i+1: non-bound first, then all
    for (size_t off = 1; off < n; ++off) {
      size_t j = (i + off) % n;
      if (m.alpha[j] <= 0.0 || m.alpha[j] >= c) continue;
      if (take_step(i, j)) return true;
    }
    for (size_t off = 1; off < n; ++off) {
      if (take_step(i, (i + off) % n)) return true;
    }
    return false;
  };

  bool examine_all = true;
  int changed = 0;
  do {
    changed = 0;
    for (size_t i = 0; i < n && steps_left > 0; ++i) {
      if (!examine_all && (m.alpha[i] <= 0.0 || m.alpha[i] >= c)) continue;
      if (examine(i)) {
        ++changed;
        --steps_left;
      }
    }
    if (examine_all)
      examine_all = false;
    else if (changed == 0)
      examine_all = true;
  } while ((changed > 0 || !examine_all) && steps_left > 0);

  return m;
}

}  // namespace

StyleModel train_svm(const std::vector<StyleFeatures>& samples, const std::vector<int>& labels,
                     double c, double sigma) {
  if (samples.size() != labels.size() || samples.empty())
    throw std::invalid_argument("train_svm: samples and labels must align and be non-empty");
  bool seen[3] = {false, false, false};
  for (int l : labels) {
    if (l < 0 || l > 2) throw std::invalid_argument("train_svm: label out of range");
    seen[l] = true;
  }
  if (seen[0] + seen[1] + seen[2] < 2)
    throw std::invalid_argument("train_svm: need at least two classes");

  StyleModel model;
  model.c = c;
  model.sigma = sigma;

  // standardize on the training set
  const size_t dim = 4;
  model.feat_mean.assign(dim, 0.0);
  model.feat_std.assign(dim, 0.0);
  for (const auto& s : samples) {
    auto a = s.to_array();
    for (size_t d = 0; d < dim; ++d) model.feat_mean[d] += a[d];
  }
  for (size_t d = 0; d < dim; ++d) model.feat_mean[d] /= static_cast<double>(samples.size());
  for (const auto& s : samples) {
    auto a = s.to_array();
    for (size_t d = 0; d < dim; ++d) {
      double diff = a[d] - model.feat_mean[d];
      model.feat_std[d] += diff * diff;
    }
  }
  for (size_t d = 0; d < dim; ++d)
    model.feat_std[d] = std::max(1e-9, std::sqrt(model.feat_std[d] / samples.size()));

  std::vector<std::vector<double>> x(samples.size());
  for (size_t i = 0; i < samples.size(); ++i) x[i] = model.standardize(samples[i]);

  std::vector<std::vector<double>> kernel(x.size(), std::vector<double>(x.size()));
  for (size_t i = 0; i < x.size(); ++i)
    for (size_t j = 0; j <= i; ++j)
      kernel[i][j] = kernel[j][i] = rbf_kernel(x[i], x[j], sigma);

  for (int cls = 0; cls < 3; ++cls) {
    std::vector<double> y(labels.size());
    for (size_t i = 0; i < labels.size(); ++i) y[i] = labels[i] == cls ? 1.0 : -1.0;
    BinarySvm bin = smo_solve(kernel, y, c, 1e-3);

    SvmModel& out = model.per_class[cls];
    out.sigma = sigma;
    out.bias = bin.bias;
    for (size_t i = 0; i < x.size(); ++i) {
      if (bin.alpha[i] > 1e-12) {
        out.support_x.push_back(x[i]);
        out.support_y.push_back(y[i]);
        out.support_alpha.push_back(bin.alpha[i]);
      }
    }
  }
  return model;
}

sim::DrivingStyle classify(const StyleModel& model, const StyleFeatures& f) {
  std::vector<double> z = model.standardize(f);
  double best = -1e300;
  int best_cls = static_cast<int>(sim::DrivingStyle::normal);
  // scan order: normal first so exact ties resolve toward it
  for (int cls : {static_cast<int>(sim::DrivingStyle::normal),
                  static_cast<int>(sim::DrivingStyle::cautious),
                  static_cast<int>(sim::DrivingStyle::aggressive)}) {
    double d = model.per_class[cls].decision(z);
    if (d > best) {
      best = d;
      best_cls = cls;
    }
  }
  return static_cast<sim::DrivingStyle>(best_cls);
}

std::vector<LabeledWindow> generate_style_dataset(const sim::EnvConfig& env_cfg, size_t n_windows,
                                                  int window_len, Rng& rng) {
  if (window_len < kMinWindow)
    throw std::invalid_argument("style dataset: window_len below the extractor minimum");
  std::vector<LabeledWindow> out;

  while (out.size() < n_windows) {
    sim::EnvConfig cfg = env_cfg;
    cfg.rng_seed = rng.next_u64();
    sim::Env env(cfg);
    size_t count = env.participants().size();
    if (count == 0) throw std::invalid_argument("style dataset: traffic required");

    std::vector<std::vector<TrajPoint>> traj(count);
    int budget = static_cast<int>(cfg.episode_length_m / (cfg.ego_v_min * sim::kKmhToMps)) + 10;

    // Rule-driven ego: accelerate when clear, back off behind traffic. Keeps
    // the flow natural instead of piling a jam behind a crawling ego.
    while (!env.terminal() && budget-- > 0) {
      double mean_v = env.traffic_mean_velocity();
      for (size_t i = 0; i < count; ++i) {
        const auto& p = env.participants()[i];
        traj[i].push_back(TrajPoint{p.lane, p.position, p.velocity, mean_v,
                                    env.participant_leader_gap(static_cast<int>(i))});
      }
      int a = sim::kStay;
      auto ld = env.leader();
      if (ld && (ld->gap < cfg.desired_gap() || ld->speed < env.ego_velocity()))
        a = sim::kDecelerate;
      else if (!ld && env.ego_velocity() < cfg.desired_speed)
        a = sim::kAccelerate;
      env.step(a);
    }

    for (size_t i = 0; i < count && out.size() < n_windows; ++i) {
      int label = static_cast<int>(env.participants()[i].style);
      for (size_t start = 0; start + window_len <= traj[i].size() && out.size() < n_windows;
           start += window_len) {
        std::vector<TrajPoint> window(traj[i].begin() + start,
                                      traj[i].begin() + start + window_len);
        out.push_back(LabeledWindow{extract_style_features(window), label});
      }
    }
  }
  return out;
}

void save_dataset_csv(const std::vector<LabeledWindow>& data, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("style dataset: cannot write " + path);
  f << "rel_speed,min_gap,lc_freq,brake_rate,label\n";
  for (const auto& w : data) {
    f << w.features.rel_speed << ',' << w.features.min_gap << ',' << w.features.lc_freq << ','
      << w.features.brake_rate << ','
      << sim::style_name(static_cast<sim::DrivingStyle>(w.label)) << '\n';
  }
}

std::vector<LabeledWindow> load_dataset_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("style dataset: cannot read " + path);
  std::string line;
  if (!std::getline(f, line) || line != "rel_speed,min_gap,lc_freq,brake_rate,label")
    throw std::runtime_error("style dataset: bad header in " + path);
  std::vector<LabeledWindow> out;
  size_t line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    LabeledWindow w;
    double* fields[4] = {&w.features.rel_speed, &w.features.min_gap, &w.features.lc_freq,
                         &w.features.brake_rate};
    for (double* fld : fields) {
      if (!std::getline(ss, cell, ','))
        throw std::runtime_error("style dataset: short row at line " + std::to_string(line_no));
      *fld = std::stod(cell);
    }
    if (!std::getline(ss, cell))
      throw std::runtime_error("style dataset: missing label at line " + std::to_string(line_no));
    w.label = static_cast<int>(sim::style_from_name(cell));
    out.push_back(std::move(w));
  }
  return out;
}

std::string StyleModel::to_json() const {
  nlohmann::json j;
  j["header"] = {{"format", "drnet-style-model"}, {"version", 1}};
  j["c"] = c;
  j["sigma"] = sigma;
  j["feat_mean"] = feat_mean;
  j["feat_std"] = feat_std;
  for (int cls = 0; cls < 3; ++cls) {
    nlohmann::json m;
    m["support_x"] = per_class[cls].support_x;
    m["support_y"] = per_class[cls].support_y;
    m["support_alpha"] = per_class[cls].support_alpha;
    m["bias"] = per_class[cls].bias;
    m["sigma"] = per_class[cls].sigma;
    j["models"][sim::style_name(static_cast<sim::DrivingStyle>(cls))] = m;
  }
  return j.dump();
}

StyleModel StyleModel::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  if (j.at("header").at("format").get<std::string>() != "drnet-style-model")
    throw std::runtime_error("style model: unrecognized format tag");
  StyleModel model;
  model.c = j.at("c").get<double>();
  model.sigma = j.at("sigma").get<double>();
  model.feat_mean = j.at("feat_mean").get<std::vector<double>>();
  model.feat_std = j.at("feat_std").get<std::vector<double>>();
  for (int cls = 0; cls < 3; ++cls) {
    const auto& m = j.at("models").at(sim::style_name(static_cast<sim::DrivingStyle>(cls)));
    SvmModel& out = model.per_class[cls];
    out.support_x = m.at("support_x").get<std::vector<std::vector<double>>>();
    out.support_y = m.at("support_y").get<std::vector<double>>();
    out.support_alpha = m.at("support_alpha").get<std::vector<double>>();
    out.bias = m.at("bias").get<double>();
    out.sigma = m.at("sigma").get<double>();
  }
  return model;
}

void StyleModel::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("style model: cannot write " + path);
  f << to_json();
}

StyleModel StyleModel::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("style model: cannot read " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return from_json(ss.str());
}

StyleAnnotator::StyleAnnotator(const StyleModel& model, int window_len)
    : model_(model), window_len_(std::max(window_len, kMinWindow)) {}

void StyleAnnotator::update(sim::Env& env) {
  const auto& parts = env.participants();
  double mean_v = env.traffic_mean_velocity();
  for (size_t i = 0; i < parts.size(); ++i) {
    const auto& p = parts[i];
    if (p.id >= static_cast<int>(history_.size())) {
      history_.resize(p.id + 1);
      codes_.resize(p.id + 1, 0);
    }
    auto& h = history_[p.id];
    h.push_back(TrajPoint{p.lane, p.position, p.velocity, mean_v,
                          env.participant_leader_gap(static_cast<int>(i))});
    if (static_cast<int>(h.size()) > window_len_) h.erase(h.begin());
    if (static_cast<int>(h.size()) == window_len_) {
      sim::DrivingStyle s = classify(model_, extract_style_features(h));
      if (codes_[p.id] == 0) ++classified_;
      codes_[p.id] = static_cast<int>(s) + 1;
    }
  }
  env.set_style_source(codes_);
}

std::vector<double> symmetric_eigenvalues(std::vector<std::vector<double>> m) {
  const size_t n = m.size();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (size_t i = 0; i < n; ++i)
      for (size_t j = i + 1; j < n; ++j) off += m[i][j] * m[i][j];
    if (off < 1e-20) break;
    for (size_t p = 0; p < n; ++p) {
      for (size_t q = p + 1; q < n; ++q) {
        if (std::fabs(m[p][q]) < 1e-15) continue;
        double theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
        double t = (theta >= 0 ? 1.0 : -1.0) /
                   (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        double cs = 1.0 / std::sqrt(t * t + 1.0);
        double sn = t * cs;
        for (size_t k = 0; k < n; ++k) {
          double mkp = m[k][p], mkq = m[k][q];
          m[k][p] = cs * mkp - sn * mkq;
          m[k][q] = sn * mkp + cs * mkq;
        }
        for (size_t k = 0; k < n; ++k) {
          double mpk = m[p][k], mqk = m[q][k];
          m[p][k] = cs * mpk - sn * mqk;
          m[q][k] = sn * mpk + cs * mqk;
        }
      }
    }
  }
  std::vector<double> eig(n);
  for (size_t i = 0; i < n; ++i) eig[i] = m[i][i];
  std::sort(eig.begin(), eig.end());
  return eig;
}

}  // namespace drnet::style
