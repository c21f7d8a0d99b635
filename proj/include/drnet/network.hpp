#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "drnet/rng.hpp"
#include "drnet/tensor.hpp"

namespace drnet::nn {

enum class Activation { relu, identity };
enum class LayerKind { conv, dense };

// Parameters of one layer. Weight layout:
//   conv:  w[((oc * in_ch + ic) * kernel + u) * kernel + v], b[oc]
//   dense: w[o * in_dim + i], b[o]
struct LayerParams {
  LayerKind kind = LayerKind::dense;
  Activation act = Activation::identity;

  // conv geometry
  int in_ch = 0, in_rows = 0, in_cols = 0;
  int out_ch = 0, kernel = 0, stride = 1;
  int out_rows = 0, out_cols = 0;

  // dense geometry
  int in_dim = 0, out_dim = 0;

  std::vector<double> w, b;

  size_t param_count() const { return w.size() + b.size(); }
};

struct LayerGrads {
  std::vector<double> w, b;
};

// Gradient accumulator matching a network's layer stack.
struct Grads {
  std::vector<LayerGrads> layers;

  void add(const Grads& o);
  bool all_finite() const;
};

// Architecture description. Channel/stride lists shorter than conv_layers are
// extended by repeating the last entry.
struct NetworkSpec {
  int input_layers = 3;  // grid history depth (4 with the style layer)
  int input_rows = 30;
  int input_cols = 15;
  int conv_layers = 3;
  std::vector<int> conv_channels = {16, 32, 32};
  int conv_kernel = 3;
  std::vector<int> conv_strides = {1, 1, 1};
  int dense_units = 96;
  int outputs = 5;
  double learning_rate = 0.0005;

  void normalize();           // pad channel/stride lists, check positivity
  void validate() const;      // throws std::invalid_argument on bad geometry
  bool operator==(const NetworkSpec&) const = default;
};

// Cached activations of one forward pass, consumed by backward().
struct ForwardTrace {
  std::vector<Tensor> acts;  // acts[0] = input, acts[i+1] = layer i output
  const std::vector<double>& output() const { return acts.back().data; }
};

// Plain value-semantics network: conv stack + one hidden dense layer + linear
// output head. Forward is const and safe to share across threads; updates
// require exclusive access.
class Network {
 public:
  Network() = default;
  Network(const NetworkSpec& spec, uint64_t init_seed);

  const NetworkSpec& spec() const { return spec_; }
  const std::vector<LayerParams>& layers() const { return layers_; }
  std::vector<LayerParams>& layers_mut() { return layers_; }
  size_t param_count() const;

  // Forward pass through the full stack; trace holds every activation.
  void forward(const Tensor& input, ForwardTrace& trace) const;

  // Convenience: forward discarding intermediates.
  std::vector<double> eval(const Tensor& input) const;

  // Backprop from d(objective)/d(output). Requires the trace of a forward
  // pass on this network. Returns parameter gradients; input gradient goes to
  // *input_grad when non-null.
  Grads backward(const ForwardTrace& trace, const std::vector<double>& output_grad,
                 Tensor* input_grad = nullptr) const;

  Grads zero_grads() const;

  // theta += eta * delta  (delta accumulated by the caller)
  void apply_update(const Grads& delta, double eta);

  bool same_spec(const Network& o) const { return spec_ == o.spec_; }

  std::string to_json(uint64_t seed_note = 0) const;
  static Network from_json(const std::string& text);
  void save(const std::string& path, uint64_t seed_note = 0) const;
  static Network load(const std::string& path);

 private:
  NetworkSpec spec_;
  std::vector<LayerParams> layers_;
};

// Single-layer primitives (also used by the layer-level tests).
Tensor conv_forward(const Tensor& input, const LayerParams& p);
Tensor dense_forward(const Tensor& input, const LayerParams& p);

// theta <- theta + eta * delta for one layer's parameters.
void sgd_update(LayerParams& p, const LayerGrads& g, double eta);

// Max relative error between analytic gradients and central finite
// differences of a scalar probe objective, over every parameter. Intended for
// networks under ~1e4 parameters.
double grad_check(const Network& net, const Tensor& input, double fd_eps = 1e-5);

}  // namespace drnet::nn
