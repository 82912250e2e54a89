#include "proxops/policy.hpp"

#include <algorithm>
#include <cmath>

#include "proxops/binio.hpp"
#include "proxops/simd/kernels.hpp"

namespace proxops {

namespace {

constexpr char kMagic[4] = {'P', 'N', 'N', '1'};
constexpr std::uint32_t kMaxWidth = 1u << 16;

void require_initialized(const PolicyNetwork& net) {
  if (!net.initialized()) throw Error(ErrorCode::NotInitialized, "policy network has no layers");
}

// Standardized copy of a batch of states.
RowMatrix standardize(const PolicyNetwork& net, const RowMatrix& states) {
  if (states.cols() != net.input_width()) {
    throw Error(ErrorCode::ShapeError, "state batch has " + std::to_string(states.cols()) +
                                           " columns, network expects " +
                                           std::to_string(net.input_width()));
  }
  RowMatrix z(states.rows(), states.cols());
  for (Eigen::Index j = 0; j < states.cols(); ++j) {
    z.col(j) = (states.col(j).array() - net.input_mean(j)) / net.input_std(j);
  }
  return z;
}

// y = x W + b for a batch.
RowMatrix dense(const DenseLayer& layer, const RowMatrix& x) {
  RowMatrix y(x.rows(), layer.out);
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    std::copy(layer.b.begin(), layer.b.end(), y.row(r).data());
  }
  simd::gemm_nn(static_cast<int>(x.rows()), layer.out, layer.in, x.data(), layer.in,
                layer.w.data(), layer.out, 1.0, y.data(), layer.out);
  return y;
}

// Per-row layer normalization in place: z <- (z - mean) / sqrt(var + eps); returns 1/sqrt(.).
Eigen::VectorXd normalize_rows(RowMatrix& z, double eps) {
  Eigen::VectorXd inv(z.rows());
  const double width = static_cast<double>(z.cols());
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    auto row = z.row(r);
    const double mean = row.sum() / width;
    row.array() -= mean;
    const double var = row.squaredNorm() / width;
    inv(r) = 1.0 / std::sqrt(var + eps);
    row *= inv(r);
  }
  return inv;
}

void apply_affine(RowMatrix& z, const DenseLayer& layer) {
  const Eigen::Map<const Eigen::RowVectorXd> g(layer.gain.data(), layer.out);
  const Eigen::Map<const Eigen::RowVectorXd> o(layer.offset.data(), layer.out);
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    z.row(r) = z.row(r).cwiseProduct(g) + o;
  }
}

}  // namespace

std::size_t PolicyNetwork::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.w.size() + l.b.size() + l.gain.size() + l.offset.size();
  return n;
}

PolicyNetwork make_policy(const NetworkShape& shape, double u_max, RandomStream& rng,
                          double dropout_rate) {
  if (shape.input != 6 || shape.output != 3) {
    throw Error(ErrorCode::ShapeError, "policy networks map 6 states to 3 controls");
  }
  if (!(u_max > 0.0)) throw Error(ErrorCode::Config, "u_max must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw Error(ErrorCode::Config, "dropout rate must be in [0, 1)");
  }
  PolicyNetwork net;
  net.u_max = u_max;
  net.dropout_rate = dropout_rate;
  int prev = shape.input;
  auto make_layer = [&](int in, int out) {
    DenseLayer l;
    l.in = in;
    l.out = out;
    l.w.assign(static_cast<std::size_t>(in) * out, 0.0);
    l.b.assign(out, 0.0);
    l.gain.assign(out, 1.0);
    l.offset.assign(out, 0.0);
    return l;
  };
  for (int width : shape.hidden) {
    if (width <= 0) throw Error(ErrorCode::ShapeError, "hidden widths must be positive");
    DenseLayer l = make_layer(prev, width);
    const double bound = 1.0 / std::sqrt(static_cast<double>(prev));
    for (double& v : l.w) v = rng.uniform(-bound, bound);
    for (double& v : l.b) v = rng.uniform(-bound, bound);
    net.layers.push_back(std::move(l));
    prev = width;
  }
  net.layers.push_back(make_layer(prev, shape.output));
  return net;
}

void set_input_standardization(PolicyNetwork& net, const StateVec& mean, const StateVec& stdev) {
  if (!mean.allFinite() || !stdev.allFinite()) {
    throw Error(ErrorCode::NumericalFailure, "non-finite standardization statistics");
  }
  net.input_mean = mean;
  for (int i = 0; i < 6; ++i) net.input_std(i) = stdev(i) > 1e-12 ? stdev(i) : 1.0;
}

std::vector<std::span<double>> parameters(PolicyNetwork& net) {
  std::vector<std::span<double>> out;
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    auto& l = net.layers[li];
    out.emplace_back(l.w);
    out.emplace_back(l.b);
    // The output layer's gain/offset are fixed at identity and are not trainable.
    const bool hidden = li + 1 < net.layers.size();
    out.push_back(hidden ? std::span<double>(l.gain) : std::span<double>());
    out.push_back(hidden ? std::span<double>(l.offset) : std::span<double>());
  }
  return out;
}

std::vector<std::span<const double>> parameters(const PolicyNetwork& net) {
  std::vector<std::span<const double>> out;
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    auto& l = net.layers[li];
    out.emplace_back(l.w);
    out.emplace_back(l.b);
    // The output layer's gain/offset are fixed at identity and are not trainable.
    const bool hidden = li + 1 < net.layers.size();
    out.push_back(hidden ? std::span<const double>(l.gain) : std::span<const double>());
    out.push_back(hidden ? std::span<const double>(l.offset) : std::span<const double>());
  }
  return out;
}

RowMatrix forward_batch(const PolicyNetwork& net, const RowMatrix& states) {
  require_initialized(net);
  if (states.rows() == 0) throw Error(ErrorCode::EmptyBatch, "empty state batch");
  RowMatrix a = standardize(net, states);
  const std::size_t n_hidden = net.layers.size() - 1;
  for (std::size_t l = 0; l < n_hidden; ++l) {
    RowMatrix z = dense(net.layers[l], a);
    normalize_rows(z, net.norm_eps);
    apply_affine(z, net.layers[l]);
    a = z.cwiseMax(0.0);
  }
  RowMatrix y = dense(net.layers.back(), a);
  return (net.u_max * y.array().tanh()).matrix();
}

ControlVec forward(const PolicyNetwork& net, const StateVec& x) {
  require_initialized(net);
  if (net.output_width() != 3 || net.input_width() != 6) {
    throw Error(ErrorCode::ShapeError, "policy network must map 6 states to 3 controls");
  }
  RowMatrix s(1, 6);
  s.row(0) = x.transpose();
  const RowMatrix y = forward_batch(net, s);
  return y.row(0).transpose();
}

TrainForward forward_train(const PolicyNetwork& net, const RowMatrix& states, RandomStream* rng) {
  require_initialized(net);
  if (states.rows() == 0) throw Error(ErrorCode::EmptyBatch, "empty training batch");
  const double rate = rng ? net.dropout_rate : 0.0;
  const double keep = 1.0 - rate;
  const std::size_t n_hidden = net.layers.size() - 1;

  TrainForward out;
  ActivationCache& c = out.cache;
  c.batch = static_cast<int>(states.rows());
  c.inputs.reserve(net.layers.size());
  c.inputs.push_back(standardize(net, states));
  for (std::size_t l = 0; l < n_hidden; ++l) {
    const DenseLayer& layer = net.layers[l];
    RowMatrix z = dense(layer, c.inputs.back());
    c.inv_std.push_back(normalize_rows(z, net.norm_eps));
    c.normed.push_back(z);
    apply_affine(z, layer);
    RowMatrix mask(z.rows(), z.cols());
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
      for (Eigen::Index j = 0; j < z.cols(); ++j) {
        double m = z(r, j) > 0.0 ? 1.0 : 0.0;
        if (rate > 0.0) m *= (rng->uniform() < keep) ? 1.0 / keep : 0.0;
        mask(r, j) = m;
      }
    }
    c.inputs.push_back(z.cwiseProduct(mask));
    c.mask.push_back(std::move(mask));
  }
  const RowMatrix y = dense(net.layers.back(), c.inputs.back());
  c.outputs = (net.u_max * y.array().tanh()).matrix();
  out.outputs = c.outputs;
  return out;
}

Gradients zero_gradients(const PolicyNetwork& net) {
  Gradients g;
  for (const auto& p : parameters(net)) g.emplace_back(p.size(), 0.0);
  return g;
}

Gradients backward(const PolicyNetwork& net, const ActivationCache& cache, const RowMatrix& d_out) {
  require_initialized(net);
  const std::size_t n_layers = net.layers.size();
  if (cache.batch == 0 || cache.inputs.size() != n_layers || cache.mask.size() != n_layers - 1) {
    throw Error(ErrorCode::ShapeError, "activation cache does not match the network");
  }
  if (d_out.rows() != cache.batch || d_out.cols() != net.output_width()) {
    throw Error(ErrorCode::ShapeError, "output gradient must be batch x " +
                                           std::to_string(net.output_width()));
  }
  Gradients grads = zero_gradients(net);
  const int batch = cache.batch;

  // d/dz of u_max * tanh(z) = u_max - y^2 / u_max.
  RowMatrix dz = d_out.cwiseProduct(
      (net.u_max - cache.outputs.array().square() / net.u_max).matrix());

  for (std::size_t li = n_layers; li-- > 0;) {
    const DenseLayer& layer = net.layers[li];
    const RowMatrix& x = cache.inputs[li];
    std::vector<double>& gw = grads[4 * li];
    std::vector<double>& gb = grads[4 * li + 1];

    if (li + 1 < n_layers) {
      // dz currently holds dL/d(layer output after dropout); step back through the gate,
      // the affine gain/offset and the normalization.
      dz = dz.cwiseProduct(cache.mask[li]);
      const RowMatrix& zhat = cache.normed[li];
      std::vector<double>& gg = grads[4 * li + 2];
      std::vector<double>& go = grads[4 * li + 3];
      for (int r = 0; r < batch; ++r) {
        for (int j = 0; j < layer.out; ++j) {
          gg[j] += dz(r, j) * zhat(r, j);
          go[j] += dz(r, j);
        }
      }
      const Eigen::Map<const Eigen::RowVectorXd> g(layer.gain.data(), layer.out);
      const double width = static_cast<double>(layer.out);
      for (int r = 0; r < batch; ++r) {
        Eigen::RowVectorXd dh = dz.row(r).cwiseProduct(g);
        const double mean_dh = dh.sum() / width;
        const double mean_dh_z = dh.dot(zhat.row(r)) / width;
        dz.row(r) = cache.inv_std[li](r) *
                    (dh.array() - mean_dh - zhat.row(r).array() * mean_dh_z).matrix();
      }
    }

    for (int r = 0; r < batch; ++r) {
      for (int j = 0; j < layer.out; ++j) gb[j] += dz(r, j);
    }
    simd::gemm_tn(layer.in, layer.out, batch, x.data(), layer.in, dz.data(), layer.out, gw.data(),
                  layer.out);
    if (li > 0) {
      RowMatrix dx(batch, layer.in);
      simd::gemm_nt(batch, layer.in, layer.out, dz.data(), layer.out, layer.w.data(), layer.out,
                    dx.data(), layer.in);
      dz = std::move(dx);
    }
  }
  return grads;
}

OptimizerState make_optimizer(const PolicyNetwork& net, const AdamWConfig& config) {
  OptimizerState opt;
  opt.config = config;
  for (const auto& p : parameters(net)) {
    opt.m.emplace_back(p.size(), 0.0);
    opt.v.emplace_back(p.size(), 0.0);
  }
  return opt;
}

void optimizer_step(PolicyNetwork& net, OptimizerState& opt, const Gradients& grads) {
  auto params = parameters(net);
  if (grads.size() != params.size() || opt.m.size() != params.size()) {
    throw Error(ErrorCode::ShapeError, "gradient/optimizer tensors do not match the network");
  }
  const AdamWConfig& c = opt.config;
  ++opt.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(opt.step));
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& p = params[t];
    const auto& g = grads[t];
    auto& m = opt.m[t];
    auto& v = opt.v[t];
    if (g.size() != p.size() || m.size() != p.size()) {
      throw Error(ErrorCode::ShapeError, "gradient tensor size mismatch");
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = std::clamp(g[i], -c.clip, c.clip);
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
      p[i] -= c.lr * c.weight_decay * p[i];
      p[i] -= c.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + c.eps);
    }
  }
}

// File layout (little-endian): "PNN1", u32 layer count, then per layer u32 rows (= outputs),
// u32 cols (= inputs), rows*cols f64 weights in row-major [out][in] order, rows f64 biases, rows
// f64 normalization gains, rows f64 offsets; then 6 f64 input means, 6 f64 input stds, f64 u_max;
// then the u64 FNV-1a checksum of every byte after the magic.
std::vector<std::uint8_t> serialize_weights(const PolicyNetwork& net) {
  require_initialized(net);
  ByteWriter w;
  w.put_bytes(kMagic, 4);
  w.put_u32(static_cast<std::uint32_t>(net.layers.size()));
  for (const auto& l : net.layers) {
    w.put_u32(static_cast<std::uint32_t>(l.out));
    w.put_u32(static_cast<std::uint32_t>(l.in));
    for (int j = 0; j < l.out; ++j) {
      for (int i = 0; i < l.in; ++i) w.put_f64(l.w[static_cast<std::size_t>(i) * l.out + j]);
    }
    for (double v : l.b) w.put_f64(v);
    for (double v : l.gain) w.put_f64(v);
    for (double v : l.offset) w.put_f64(v);
  }
  for (int i = 0; i < 6; ++i) w.put_f64(net.input_mean(i));
  for (int i = 0; i < 6; ++i) w.put_f64(net.input_std(i));
  w.put_f64(net.u_max);
  const auto& bytes = w.bytes();
  const std::uint64_t sum = fnv1a64(bytes.data() + 4, bytes.size() - 4);
  w.put_u64(sum);
  return w.bytes();
}

PolicyNetwork deserialize_weights(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 + 4 + 8 || !std::equal(kMagic, kMagic + 4, bytes.begin())) {
    throw Error(ErrorCode::CorruptModel, "weight file: bad magic or truncated header");
  }
  const std::size_t body = bytes.size() - 8;
  ByteReader trailer(bytes.data() + body, 8, ErrorCode::CorruptModel, "weight file");
  if (trailer.get_u64() != fnv1a64(bytes.data() + 4, body - 4)) {
    throw Error(ErrorCode::CorruptModel, "weight file: checksum mismatch");
  }
  ByteReader r(bytes.data() + 4, body - 4, ErrorCode::CorruptModel, "weight file");
  const std::uint32_t n_layers = r.get_u32();
  if (n_layers < 1 || n_layers > 64) r.fail("implausible layer count " + std::to_string(n_layers));
  PolicyNetwork net;
  int prev = -1;
  for (std::uint32_t li = 0; li < n_layers; ++li) {
    const std::uint32_t rows = r.get_u32();
    const std::uint32_t cols = r.get_u32();
    if (rows == 0 || cols == 0 || rows > kMaxWidth || cols > kMaxWidth) {
      r.fail("layer " + std::to_string(li) + " has invalid dimensions");
    }
    if (prev >= 0 && static_cast<int>(cols) != prev) {
      r.fail("layer " + std::to_string(li) + " input width " + std::to_string(cols) +
             " does not match previous output width " + std::to_string(prev));
    }
    DenseLayer l;
    l.out = static_cast<int>(rows);
    l.in = static_cast<int>(cols);
    l.w.assign(static_cast<std::size_t>(rows) * cols, 0.0);
    for (int j = 0; j < l.out; ++j) {
      for (int i = 0; i < l.in; ++i) l.w[static_cast<std::size_t>(i) * l.out + j] = r.get_f64();
    }
    for (auto* vec : {&l.b, &l.gain, &l.offset}) {
      vec->resize(rows);
      for (double& v : *vec) v = r.get_f64();
    }
    prev = l.out;
    net.layers.push_back(std::move(l));
  }
  if (net.layers.front().in != 6 || net.layers.back().out != 3) {
    r.fail("network must map 6 inputs to 3 outputs");
  }
  const DenseLayer& last = net.layers.back();
  for (int j = 0; j < last.out; ++j) {
    if (last.gain[j] != 1.0 || last.offset[j] != 0.0) r.fail("output layer must not be normalized");
  }
  for (int i = 0; i < 6; ++i) net.input_mean(i) = r.get_f64();
  for (int i = 0; i < 6; ++i) net.input_std(i) = r.get_f64();
  net.u_max = r.get_f64();
  if (r.remaining() != 0) r.fail("trailing bytes after the payload");
  for (const auto& p : parameters(net)) {
    for (double v : p) {
      if (!std::isfinite(v)) r.fail("non-finite parameter");
    }
  }
  if (!net.input_mean.allFinite() || !(net.input_std.array() > 0.0).all() ||
      !net.input_std.allFinite() || !(net.u_max > 0.0) || !std::isfinite(net.u_max)) {
    r.fail("invalid standardization statistics or control bound");
  }
  return net;
}

void save_weights(const PolicyNetwork& net, const std::string& path) {
  write_file_bytes(path, serialize_weights(net));
}

PolicyNetwork load_weights(const std::string& path) {
  return deserialize_weights(read_file_bytes(path));
}

}  // namespace proxops
