#include "drnet/network.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace drnet::nn {

namespace {

double activate(double x, Activation a) {
  return a == Activation::relu ? (x > 0.0 ? x : 0.0) : x;
}

void check_shape(const Tensor& t, int ch, int rows, int cols, const char* where) {
  if (t.shape.size() != 3 || t.shape[0] != ch || t.shape[1] != rows || t.shape[2] != cols)
    throw std::invalid_argument(std::string(where) + ": input shape " + t.shape_str() +
                                " does not match layer geometry");
}

}  // namespace

void Grads::add(const Grads& o) {
  for (size_t l = 0; l < layers.size(); ++l) {
    for (size_t i = 0; i < layers[l].w.size(); ++i) layers[l].w[i] += o.layers[l].w[i];
    for (size_t i = 0; i < layers[l].b.size(); ++i) layers[l].b[i] += o.layers[l].b[i];
  }
}

bool Grads::all_finite() const {
  for (const auto& l : layers) {
    for (double v : l.w)
      if (!std::isfinite(v)) return false;
    for (double v : l.b)
      if (!std::isfinite(v)) return false;
  }
  return true;
}

void NetworkSpec::normalize() {
  if (conv_channels.empty()) conv_channels = {16};
  if (conv_strides.empty()) conv_strides = {1};
  while (static_cast<int>(conv_channels.size()) < conv_layers)
    conv_channels.push_back(conv_channels.back());
  while (static_cast<int>(conv_strides.size()) < conv_layers)
    conv_strides.push_back(conv_strides.back());
  conv_channels.resize(conv_layers);
  conv_strides.resize(conv_layers);
}

void NetworkSpec::validate() const {
  if (input_layers < 1 || input_rows < 1 || input_cols < 1)
    throw std::invalid_argument("network: input dimensions must be positive");
  if (conv_layers < 0 || dense_units < 1 || outputs < 1)
    throw std::invalid_argument("network: layer sizes must be positive");
  if (static_cast<int>(conv_channels.size()) != conv_layers ||
      static_cast<int>(conv_strides.size()) != conv_layers)
    throw std::invalid_argument("network: channel/stride lists must match conv_layers");
  int rows = input_rows, cols = input_cols;
  for (int l = 0; l < conv_layers; ++l) {
    if (conv_channels[l] < 1 || conv_strides[l] < 1)
      throw std::invalid_argument("network: conv channels and strides must be >= 1");
    rows = (rows - conv_kernel) / conv_strides[l] + 1;
    cols = (cols - conv_kernel) / conv_strides[l] + 1;
    if (rows < 1 || cols < 1)
      throw std::invalid_argument("network: conv stack shrinks the grid below 1x1 at layer " +
                                  std::to_string(l));
  }
}

Network::Network(const NetworkSpec& spec, uint64_t init_seed) : spec_(spec) {
  spec_.normalize();
  spec_.validate();
  Rng rng(init_seed);

  auto glorot = [&](std::vector<double>& w, int fan_in, int fan_out) {
    double bound = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& x : w) x = rng.uniform(-bound, bound);
  };

  int ch = spec_.input_layers, rows = spec_.input_rows, cols = spec_.input_cols;
  for (int l = 0; l < spec_.conv_layers; ++l) {
    LayerParams p;
    p.kind = LayerKind::conv;
    p.act = Activation::relu;
    p.in_ch = ch;
    p.in_rows = rows;
    p.in_cols = cols;
    p.out_ch = spec_.conv_channels[l];
    p.kernel = spec_.conv_kernel;
    p.stride = spec_.conv_strides[l];
    p.out_rows = (rows - p.kernel) / p.stride + 1;
    p.out_cols = (cols - p.kernel) / p.stride + 1;
    p.w.assign(static_cast<size_t>(p.out_ch) * p.in_ch * p.kernel * p.kernel, 0.0);
    p.b.assign(p.out_ch, 0.0);
    glorot(p.w, p.in_ch * p.kernel * p.kernel, p.out_ch * p.kernel * p.kernel);
    layers_.push_back(std::move(p));
    ch = spec_.conv_channels[l];
    rows = layers_.back().out_rows;
    cols = layers_.back().out_cols;
  }

  int flat = ch * rows * cols;
  LayerParams hidden;
  hidden.kind = LayerKind::dense;
  hidden.act = Activation::relu;
  hidden.in_dim = flat;
  hidden.out_dim = spec_.dense_units;
  hidden.w.assign(static_cast<size_t>(flat) * spec_.dense_units, 0.0);
  hidden.b.assign(spec_.dense_units, 0.0);
  glorot(hidden.w, flat, spec_.dense_units);
  layers_.push_back(std::move(hidden));

  LayerParams head;
  head.kind = LayerKind::dense;
  head.act = Activation::identity;  // raw Q-values
  head.in_dim = spec_.dense_units;
  head.out_dim = spec_.outputs;
  head.w.assign(static_cast<size_t>(spec_.dense_units) * spec_.outputs, 0.0);
  head.b.assign(spec_.outputs, 0.0);
  glorot(head.w, spec_.dense_units, spec_.outputs);
  layers_.push_back(std::move(head));
}

size_t Network::param_count() const {
  size_t n = 0;
  for (const auto& l : layers_) n += l.param_count();
  return n;
}

Tensor conv_forward(const Tensor& input, const LayerParams& p) {
  if (p.kind != LayerKind::conv) throw std::invalid_argument("conv_forward: not a conv layer");
  check_shape(input, p.in_ch, p.in_rows, p.in_cols, "conv_forward");
  Tensor out(p.out_ch, p.out_rows, p.out_cols);
  const int k = p.kernel, s = p.stride;
  for (int oc = 0; oc < p.out_ch; ++oc) {
    for (int i = 0; i < p.out_rows; ++i) {
      for (int j = 0; j < p.out_cols; ++j) {
        double acc = p.b[oc];
        for (int ic = 0; ic < p.in_ch; ++ic) {
          const double* wbase = &p.w[((static_cast<size_t>(oc) * p.in_ch + ic) * k) * k];
          for (int u = 0; u < k; ++u) {
            const double* in_row = &input.data[(static_cast<size_t>(ic) * p.in_rows + i * s + u) *
                                               p.in_cols + j * s];
            const double* w_row = wbase + u * k;
            for (int v = 0; v < k; ++v) acc += w_row[v] * in_row[v];
          }
        }
        out.at(oc, i, j) = activate(acc, p.act);
      }
    }
  }
  return out;
}

Tensor dense_forward(const Tensor& input, const LayerParams& p) {
  if (p.kind != LayerKind::dense) throw std::invalid_argument("dense_forward: not a dense layer");
  if (static_cast<int>(input.size()) != p.in_dim)
    throw std::invalid_argument("dense_forward: input size " + std::to_string(input.size()) +
                                " != " + std::to_string(p.in_dim));
  Tensor out(p.out_dim);
  for (int o = 0; o < p.out_dim; ++o) {
    double acc = p.b[o];
    const double* w_row = &p.w[static_cast<size_t>(o) * p.in_dim];
    for (int i = 0; i < p.in_dim; ++i) acc += w_row[i] * input.data[i];
    out.data[o] = activate(acc, p.act);
  }
  return out;
}

void Network::forward(const Tensor& input, ForwardTrace& trace) const {
  trace.acts.clear();
  trace.acts.reserve(layers_.size() + 1);
  trace.acts.push_back(input);
  for (const auto& p : layers_) {
    const Tensor& x = trace.acts.back();
    trace.acts.push_back(p.kind == LayerKind::conv ? conv_forward(x, p) : dense_forward(x, p));
  }
}

std::vector<double> Network::eval(const Tensor& input) const {
  ForwardTrace t;
  forward(input, t);
  return t.output();
}

Grads Network::zero_grads() const {
  Grads g;
  g.layers.resize(layers_.size());
  for (size_t l = 0; l < layers_.size(); ++l) {
    g.layers[l].w.assign(layers_[l].w.size(), 0.0);
    g.layers[l].b.assign(layers_[l].b.size(), 0.0);
  }
  return g;
}

Grads Network::backward(const ForwardTrace& trace, const std::vector<double>& output_grad,
                        Tensor* input_grad) const {
  if (trace.acts.size() != layers_.size() + 1)
    throw std::logic_error("backward: forward trace missing or stale");
  if (output_grad.size() != trace.output().size())
    throw std::invalid_argument("backward: output_grad size mismatch");

  Grads grads = zero_grads();
  std::vector<double> dout = output_grad;

  for (int l = static_cast<int>(layers_.size()) - 1; l >= 0; --l) {
    const LayerParams& p = layers_[l];
    const Tensor& x = trace.acts[l];
    const Tensor& y = trace.acts[l + 1];
    LayerGrads& g = grads.layers[l];

    // d(pre-activation): ReLU gate uses the cached output sign.
    std::vector<double> dpre(dout.size());
    for (size_t i = 0; i < dout.size(); ++i)
      dpre[i] = (p.act == Activation::relu && y.data[i] <= 0.0) ? 0.0 : dout[i];

    std::vector<double> dx(x.size(), 0.0);
    if (p.kind == LayerKind::dense) {
      for (int o = 0; o < p.out_dim; ++o) {
        double d = dpre[o];
        if (d == 0.0) continue;
        g.b[o] += d;
        const size_t row = static_cast<size_t>(o) * p.in_dim;
        for (int i = 0; i < p.in_dim; ++i) {
          g.w[row + i] += d * x.data[i];
          dx[i] += d * p.w[row + i];
        }
      }
    } else {
      const int k = p.kernel, s = p.stride;
      for (int oc = 0; oc < p.out_ch; ++oc) {
        for (int i = 0; i < p.out_rows; ++i) {
          for (int j = 0; j < p.out_cols; ++j) {
            double d = dpre[(static_cast<size_t>(oc) * p.out_rows + i) * p.out_cols + j];
            if (d == 0.0) continue;
            g.b[oc] += d;
            for (int ic = 0; ic < p.in_ch; ++ic) {
              const size_t wbase = ((static_cast<size_t>(oc) * p.in_ch + ic) * k) * k;
              for (int u = 0; u < k; ++u) {
                const size_t in_base =
                    (static_cast<size_t>(ic) * p.in_rows + i * s + u) * p.in_cols + j * s;
                for (int v = 0; v < k; ++v) {
                  g.w[wbase + u * k + v] += d * x.data[in_base + v];
                  dx[in_base + v] += d * p.w[wbase + u * k + v];
                }
              }
            }
          }
        }
      }
    }

    dout = std::move(dx);
  }

  if (input_grad) {
    *input_grad = trace.acts[0];
    input_grad->data = dout;
  }
  return grads;
}

void sgd_update(LayerParams& p, const LayerGrads& g, double eta) {
  if (g.w.size() != p.w.size() || g.b.size() != p.b.size())
    throw std::invalid_argument("sgd_update: gradient shape mismatch");
  for (size_t i = 0; i < p.w.size(); ++i) p.w[i] += eta * g.w[i];
  for (size_t i = 0; i < p.b.size(); ++i) p.b[i] += eta * g.b[i];
}

void Network::apply_update(const Grads& delta, double eta) {
  if (delta.layers.size() != layers_.size())
    throw std::invalid_argument("apply_update: layer count mismatch");
  for (size_t l = 0; l < layers_.size(); ++l) sgd_update(layers_[l], delta.layers[l], eta);
}

double grad_check(const Network& net, const Tensor& input, double fd_eps) {
  // Scalar probe J = sum_i c_i * out_i with fixed non-uniform coefficients so
  // every output unit contributes.
  std::vector<double> coef;
  {
    ForwardTrace t;
    net.forward(input, t);
    coef.resize(t.output().size());
    for (size_t i = 0; i < coef.size(); ++i) coef[i] = 1.0 + 0.37 * static_cast<double>(i);
  }

  auto objective = [&](const Network& n) {
    std::vector<double> out = n.eval(input);
    double j = 0.0;
    for (size_t i = 0; i < out.size(); ++i) j += coef[i] * out[i];
    return j;
  };

  ForwardTrace trace;
  net.forward(input, trace);
  Grads analytic = net.backward(trace, coef);

  Network probe = net;
  double max_rel = 0.0;
  auto check_param = [&](double& slot, double a) {
    const double orig = slot;
    slot = orig + fd_eps;
    double jp = objective(probe);
    slot = orig - fd_eps;
    double jm = objective(probe);
    slot = orig;
    double numeric = (jp - jm) / (2.0 * fd_eps);
    double rel = std::fabs(a - numeric) /
                 std::max({std::fabs(a), std::fabs(numeric), 1e-8});
    max_rel = std::max(max_rel, rel);
  };

  for (size_t l = 0; l < probe.layers_mut().size(); ++l) {
    LayerParams& p = probe.layers_mut()[l];
    for (size_t i = 0; i < p.w.size(); ++i) check_param(p.w[i], analytic.layers[l].w[i]);
    for (size_t i = 0; i < p.b.size(); ++i) check_param(p.b[i], analytic.layers[l].b[i]);
  }
  return max_rel;
}

std::string Network::to_json(uint64_t seed_note) const {
  nlohmann::json j;
  j["header"] = {{"format", "drnet-network"}, {"version", 1}, {"seed", seed_note}};
  j["spec"] = {{"input_layers", spec_.input_layers},
               {"input_rows", spec_.input_rows},
               {"input_cols", spec_.input_cols},
               {"conv_layers", spec_.conv_layers},
               {"conv_channels", spec_.conv_channels},
               {"conv_kernel", spec_.conv_kernel},
               {"conv_strides", spec_.conv_strides},
               {"dense_units", spec_.dense_units},
               {"outputs", spec_.outputs},
               {"learning_rate", spec_.learning_rate}};
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& p : layers_)
    layers.push_back({{"kind", p.kind == LayerKind::conv ? "conv" : "dense"},
                      {"w", p.w},
                      {"b", p.b}});
  j["layers"] = layers;
  return j.dump();
}

Network Network::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  if (j.at("header").at("format").get<std::string>() != "drnet-network")
    throw std::runtime_error("network checkpoint: unrecognized format tag");

  NetworkSpec spec;
  const auto& s = j.at("spec");
  spec.input_layers = s.at("input_layers").get<int>();
  spec.input_rows = s.at("input_rows").get<int>();
  spec.input_cols = s.at("input_cols").get<int>();
  spec.conv_layers = s.at("conv_layers").get<int>();
  spec.conv_channels = s.at("conv_channels").get<std::vector<int>>();
  spec.conv_kernel = s.at("conv_kernel").get<int>();
  spec.conv_strides = s.at("conv_strides").get<std::vector<int>>();
  spec.dense_units = s.at("dense_units").get<int>();
  spec.outputs = s.at("outputs").get<int>();
  spec.learning_rate = s.at("learning_rate").get<double>();

  Network net(spec, 0);
  const auto& layers = j.at("layers");
  if (layers.size() != net.layers_.size())
    throw std::runtime_error("network checkpoint: layer count mismatch");
  for (size_t l = 0; l < net.layers_.size(); ++l) {
    auto w = layers[l].at("w").get<std::vector<double>>();
    auto b = layers[l].at("b").get<std::vector<double>>();
    if (w.size() != net.layers_[l].w.size() || b.size() != net.layers_[l].b.size())
      throw std::runtime_error("network checkpoint: parameter shape mismatch at layer " +
                               std::to_string(l));
    net.layers_[l].w = std::move(w);
    net.layers_[l].b = std::move(b);
  }
  return net;
}

void Network::save(const std::string& path, uint64_t seed_note) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write network checkpoint: " + path);
  f << to_json(seed_note);
  if (!f) throw std::runtime_error("write failed: " + path);
}

Network Network::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read network checkpoint: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return from_json(ss.str());
}

}  // namespace drnet::nn
