#pragma once

#include <span>
#include <string>
#include <vector>

#include "proxops/random.hpp"
#include "proxops/types.hpp"

namespace proxops {

/// Row-major dynamic matrix; one row per sample.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Input and output widths are fixed by the state and control dimensions; only the hidden
/// stack is free.
struct NetworkShape {
  int input = 6;
  std::vector<int> hidden{256, 256, 256, 256};
  int output = 3;
};

/// One fully-connected layer. Weights are stored input-major (w[i * out + j] couples input i to
/// output j), which keeps the batch products in the forward pass row-major friendly.
/// Hidden layers normalize their pre-activations with a learned gain/offset; the output layer
/// keeps gain = 1 and offset = 0 and does not normalize.
struct DenseLayer {
  int in = 0;
  int out = 0;
  std::vector<double> w;
  std::vector<double> b;
  std::vector<double> gain;
  std::vector<double> offset;
};

/// MLP policy: standardize -> [dense -> layer norm -> ReLU -> dropout] x hidden -> dense ->
/// u_max * tanh. The bounded squashing keeps every output inside the control box.
struct PolicyNetwork {
  std::vector<DenseLayer> layers;  // hidden layers followed by the output layer
  StateVec input_mean = StateVec::Zero();
  StateVec input_std = StateVec::Ones();
  double u_max = 0.082;
  double dropout_rate = 0.1;
  double norm_eps = 1e-5;

  bool initialized() const { return !layers.empty(); }
  int input_width() const { return layers.empty() ? 0 : layers.front().in; }
  int output_width() const { return layers.empty() ? 0 : layers.back().out; }
  std::size_t parameter_count() const;
};

/// Hidden layers get uniform fan-in initialization U(-1/sqrt(in), 1/sqrt(in)) for weights and
/// biases; the output layer starts at zero so the untrained policy commands zero acceleration.
PolicyNetwork make_policy(const NetworkShape& shape, double u_max, RandomStream& rng,
                          double dropout_rate = 0.1);

/// Sets the frozen input standardization. Components with std below 1e-12 are treated as 1.
void set_input_standardization(PolicyNetwork& net, const StateVec& mean, const StateVec& stdev);

/// Views onto every trainable tensor in a fixed order (per layer: w, b, gain, offset). The
/// output layer's gain and offset are fixed, so their views are empty.
std::vector<std::span<double>> parameters(PolicyNetwork& net);
std::vector<std::span<const double>> parameters(const PolicyNetwork& net);

/// Deterministic inference (dropout off).
ControlVec forward(const PolicyNetwork& net, const StateVec& x);

/// Batched deterministic inference; states is B x input, the result B x output.
RowMatrix forward_batch(const PolicyNetwork& net, const RowMatrix& states);

/// Everything backward() needs from a training-mode pass.
struct ActivationCache {
  int batch = 0;
  std::vector<RowMatrix> inputs;    // input to each layer (standardized states for layer 0)
  std::vector<RowMatrix> normed;    // normalized pre-activations, hidden layers
  std::vector<Eigen::VectorXd> inv_std;  // per-sample 1/sqrt(var + eps), hidden layers
  std::vector<RowMatrix> mask;      // ReLU gate times inverted-dropout scale, hidden layers
  RowMatrix outputs;                // squashed outputs
};

struct TrainForward {
  RowMatrix outputs;
  ActivationCache cache;
};

/// Training-mode pass. Dropout uses the network's rate with masks drawn from `rng`; pass
/// nullptr (or a zero rate) for a deterministic pass. Throws EmptyBatch for zero rows.
TrainForward forward_train(const PolicyNetwork& net, const RowMatrix& states, RandomStream* rng);

/// Gradient tensors in the order of parameters().
using Gradients = std::vector<std::vector<double>>;

Gradients zero_gradients(const PolicyNetwork& net);

/// Reverse-mode gradients of sum_b d_out(b, :) . outputs(b, :) with respect to all parameters.
/// Loss gradients that already carry the 1/B of a mean therefore yield mean gradients.
Gradients backward(const PolicyNetwork& net, const ActivationCache& cache, const RowMatrix& d_out);

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double clip = 0.5;  // per-element gradient clip
};

struct OptimizerState {
  AdamWConfig config;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  long step = 0;
};

OptimizerState make_optimizer(const PolicyNetwork& net, const AdamWConfig& config = {});

/// Clips each gradient element to [-clip, clip], then applies one decoupled-weight-decay Adam
/// update to every parameter.
void optimizer_step(PolicyNetwork& net, OptimizerState& opt, const Gradients& grads);

/// Binary weight file ("PNN1"); see README for the layout.
std::vector<std::uint8_t> serialize_weights(const PolicyNetwork& net);
PolicyNetwork deserialize_weights(const std::vector<std::uint8_t>& bytes);
void save_weights(const PolicyNetwork& net, const std::string& path);
PolicyNetwork load_weights(const std::string& path);

}  // namespace proxops
