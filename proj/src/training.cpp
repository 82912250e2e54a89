#include "proxops/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "proxops/binio.hpp"
#include "proxops/dynamics.hpp"
#include "proxops/filter.hpp"

namespace proxops {

namespace {

constexpr char kDatasetMagic[4] = {'D', 'S', 'E', 'T'};

bool is_undefined(const Error& e) { return e.code() == ErrorCode::Undefined; }

}  // namespace

void Dataset::append(const Dataset& other) {
  records.insert(records.end(), other.records.begin(), other.records.end());
}

Dataset Dataset::filter(Phase p) const {
  Dataset out;
  for (const Sample& s : records) {
    if (s.phase == p) out.records.push_back(s);
  }
  return out;
}

RowMatrix Dataset::states() const {
  RowMatrix m(static_cast<Eigen::Index>(records.size()), 6);
  for (std::size_t i = 0; i < records.size(); ++i) {
    m.row(static_cast<Eigen::Index>(i)) = records[i].x.transpose();
  }
  return m;
}

RowMatrix Dataset::controls() const {
  RowMatrix m(static_cast<Eigen::Index>(records.size()), 3);
  for (std::size_t i = 0; i < records.size(); ++i) {
    m.row(static_cast<Eigen::Index>(i)) = records[i].u.transpose();
  }
  return m;
}

void validate(const Dataset& data, double u_max) {
  for (std::size_t i = 0; i < data.records.size(); ++i) {
    const Sample& s = data.records[i];
    if (!s.x.allFinite() || !s.u.allFinite()) {
      throw Error(ErrorCode::CorruptDataset, "record " + std::to_string(i) + " is not finite");
    }
    if (s.u.cwiseAbs().maxCoeff() > u_max) {
      throw Error(ErrorCode::CorruptDataset,
                  "record " + std::to_string(i) + " has a control outside the input box");
    }
    if (s.phase != Phase::FlyAround && s.phase != Phase::FinalApproach) {
      throw Error(ErrorCode::CorruptDataset, "record " + std::to_string(i) + " has a bad phase");
    }
  }
}

std::vector<std::uint8_t> serialize_dataset(const Dataset& data) {
  ByteWriter w;
  w.put_bytes(kDatasetMagic, 4);
  w.put_u64(data.records.size());
  for (const Sample& s : data.records) {
    w.put_u8(static_cast<std::uint8_t>(s.phase));
    for (int i = 0; i < 6; ++i) w.put_f64(s.x(i));
    for (int i = 0; i < 3; ++i) w.put_f64(s.u(i));
  }
  std::vector<std::uint8_t> bytes = w.bytes();
  ByteWriter trailer;
  trailer.put_u64(fnv1a64(bytes.data() + 4, bytes.size() - 4));
  bytes.insert(bytes.end(), trailer.bytes().begin(), trailer.bytes().end());
  return bytes;
}

Dataset deserialize_dataset(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 + 8 + 8 || !std::equal(kDatasetMagic, kDatasetMagic + 4, bytes.begin())) {
    throw Error(ErrorCode::CorruptDataset, "dataset file: bad magic or truncated header");
  }
  const std::size_t body = bytes.size() - 8;
  ByteReader trailer(bytes.data() + body, 8, ErrorCode::CorruptDataset, "dataset file");
  if (trailer.get_u64() != fnv1a64(bytes.data() + 4, body - 4)) {
    throw Error(ErrorCode::CorruptDataset, "dataset file: checksum mismatch");
  }
  ByteReader r(bytes.data() + 4, body - 4, ErrorCode::CorruptDataset, "dataset file");
  const std::uint64_t count = r.get_u64();
  constexpr std::size_t kRecordBytes = 1 + 9 * 8;
  if (count > r.remaining() / kRecordBytes || count * kRecordBytes != r.remaining()) {
    r.fail("record count " + std::to_string(count) + " does not match the file size");
  }
  Dataset data;
  data.records.resize(count);
  for (Sample& s : data.records) {
    const std::uint8_t tag = r.get_u8();
    if (tag > 1) r.fail("unknown phase tag " + std::to_string(tag));
    s.phase = static_cast<Phase>(tag);
    for (int i = 0; i < 6; ++i) s.x(i) = r.get_f64();
    for (int i = 0; i < 3; ++i) s.u(i) = r.get_f64();
    if (!s.x.allFinite() || !s.u.allFinite()) r.fail("non-finite record");
  }
  return data;
}

void save_dataset(const Dataset& data, const std::string& path) {
  write_file_bytes(path, serialize_dataset(data));
}

Dataset load_dataset(const std::string& path) { return deserialize_dataset(read_file_bytes(path)); }

Dataset generate_expert_dataset(const Scenario& scenario, Phase phase, int n_traj,
                                RandomStream& rng, int max_steps, std::size_t max_samples,
                                GenerationStats* stats) {
  if (n_traj < 0 || max_steps < 0) {
    throw Error(ErrorCode::Config, "trajectory count and step cap must be nonnegative");
  }
  const PhaseSetup& setup = scenario.phase(phase);
  const ScenarioConfig& cfg = scenario.config();
  GenerationStats local;
  Dataset data;
  auto full = [&] { return max_samples > 0 && data.size() >= max_samples; };

  for (int t = 0; t < n_traj && !full(); ++t) {
    ExpertController expert(setup.ocp);
    StateVec x;
    ControlVec u;
    // Resample the start until the expert can solve it.
    for (;;) {
      x = scenario.sample_start(phase, rng);
      expert.reset();
      try {
        u = expert.control(x);
        break;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::Infeasible) throw;
        ++local.resampled_starts;
      }
    }
    ++local.trajectories;
    int dwell = 0;
    for (int k = 0; k < max_steps && !full(); ++k) {
      if (k > 0) {
        try {
          u = expert.control(x);
        } catch (const Error& e) {
          if (e.code() != ErrorCode::Infeasible) throw;
          ++local.skipped_steps;
          break;
        }
      }
      data.records.push_back({x, u, phase});
      x = perturbed_step(x, u, scenario.model(), rng, cfg.w_max);
      dwell = scenario.at_goal(phase, x) ? dwell + 1 : 0;
      if (dwell >= cfg.dwell_steps) break;
    }
  }
  if (stats) *stats = local;
  return data;
}

void dataset_statistics(const Dataset& data, StateVec& mean, StateVec& stdev) {
  mean.setZero();
  stdev.setOnes();
  if (data.empty()) return;
  const double count = static_cast<double>(data.size());
  for (const Sample& s : data.records) mean += s.x;
  mean /= count;
  StateVec var = StateVec::Zero();
  for (const Sample& s : data.records) var += (s.x - mean).cwiseAbs2();
  stdev = (var / count).cwiseSqrt();
}

void validate(const LossWeights& w) {
  if (!(w.lambda_imit > 0.0)) throw Error(ErrorCode::Config, "lambda_imit must be positive");
  if (!(w.lambda_cbf >= 0.0)) throw Error(ErrorCode::Config, "lambda_cbf must be nonnegative");
  if (!(w.lambda_clf >= 0.0)) throw Error(ErrorCode::Config, "lambda_clf must be nonnegative");
}

LossValue imitation_loss(const RowMatrix& outputs, const RowMatrix& expert) {
  if (outputs.rows() == 0) throw Error(ErrorCode::EmptyBatch, "imitation loss of an empty batch");
  if (outputs.rows() != expert.rows() || outputs.cols() != 3 || expert.cols() != 3) {
    throw Error(ErrorCode::ShapeError, "imitation loss: batch shapes differ");
  }
  const double batch = static_cast<double>(outputs.rows());
  const RowMatrix diff = outputs - expert;
  LossValue out;
  out.value = diff.rowwise().squaredNorm().sum() / batch;
  out.grad = (2.0 / batch) * diff;
  return out;
}

LossValue cbf_loss(const RowMatrix& states, const RowMatrix& outputs, const Barrier& barrier,
                   double n) {
  if (outputs.rows() == 0) throw Error(ErrorCode::EmptyBatch, "barrier loss of an empty batch");
  if (states.rows() != outputs.rows() || states.cols() != 6 || outputs.cols() != 3) {
    throw Error(ErrorCode::ShapeError, "barrier loss: batch shapes differ");
  }
  const double batch = static_cast<double>(outputs.rows());
  LossValue out;
  out.grad = RowMatrix::Zero(outputs.rows(), 3);
  for (Eigen::Index b = 0; b < outputs.rows(); ++b) {
    AffineInU m;
    try {
      m = cbf_margin_affine(barrier, states.row(b).transpose(), n);
    } catch (const Error& e) {
      if (!is_undefined(e)) throw;
      ++out.excluded;
      continue;
    }
    const double hinge = std::max(0.0, -m.at(outputs.row(b).transpose()));
    if (hinge == 0.0) continue;
    out.value += hinge * hinge / batch;
    out.grad.row(b) = (-2.0 * hinge / batch) * m.slope.transpose();
  }
  return out;
}

LossValue clf_loss(const RowMatrix& states, const RowMatrix& outputs, const ClfSpec& clf,
                   double n) {
  if (outputs.rows() == 0) throw Error(ErrorCode::EmptyBatch, "Lyapunov loss of an empty batch");
  if (states.rows() != outputs.rows() || states.cols() != 6 || outputs.cols() != 3) {
    throw Error(ErrorCode::ShapeError, "Lyapunov loss: batch shapes differ");
  }
  const double batch = static_cast<double>(outputs.rows());
  LossValue out;
  out.grad = RowMatrix::Zero(outputs.rows(), 3);
  for (Eigen::Index b = 0; b < outputs.rows(); ++b) {
    const AffineInU m = clf_margin_affine(clf, states.row(b).transpose(), n);
    const double hinge = std::max(0.0, m.at(outputs.row(b).transpose()));
    if (hinge == 0.0) continue;
    out.value += hinge * hinge / batch;
    out.grad.row(b) = (2.0 * hinge / batch) * m.slope.transpose();
  }
  return out;
}

TotalLoss total_loss(const RowMatrix& states, const RowMatrix& expert, const RowMatrix& outputs,
                     const LossWeights& weights, const PhaseSetup& setup, double n) {
  validate(weights);
  const LossValue imit = imitation_loss(outputs, expert);
  TotalLoss out;
  out.imit = imit.value;
  out.grad = weights.lambda_imit * imit.grad;
  if (weights.lambda_cbf > 0.0) {
    const LossValue c = cbf_loss(states, outputs, setup.barrier, n);
    out.cbf = c.value;
    out.grad += weights.lambda_cbf * c.grad;
  }
  if (weights.lambda_clf > 0.0) {
    const LossValue v = clf_loss(states, outputs, setup.clf, n);
    out.clf = v.value;
    out.grad += weights.lambda_clf * v.grad;
  }
  out.total = weights.lambda_imit * out.imit + weights.lambda_cbf * out.cbf +
              weights.lambda_clf * out.clf;
  return out;
}

double DaggerSchedule::kappa(int i) const {
  return 1.0 - static_cast<double>(i) / static_cast<double>(n_iter);
}

std::vector<double> DaggerSchedule::kappas() const {
  std::vector<double> k;
  for (int i = 1; i <= n_iter; ++i) k.push_back(kappa(i));
  return k;
}

void validate(const DaggerSchedule& s) {
  if (s.n_iter < 1) throw Error(ErrorCode::Config, "n_iter must be at least 1");
  if (s.n_rollout < 0) throw Error(ErrorCode::Config, "n_rollout must be nonnegative");
  if (s.n_epochs < 0) throw Error(ErrorCode::Config, "n_epochs must be nonnegative");
  if (s.max_steps < 1) throw Error(ErrorCode::Config, "max_steps must be positive");
}

PolicyNetwork make_phase_policy(const ScenarioConfig& cfg, const Dataset& data,
                                RandomStream& rng) {
  NetworkShape shape;
  shape.hidden.assign(static_cast<std::size_t>(cfg.hidden_layers), cfg.hidden_width);
  PolicyNetwork net = make_policy(shape, cfg.u_max, rng, cfg.dropout);
  StateVec mean;
  StateVec stdev;
  dataset_statistics(data, mean, stdev);
  set_input_standardization(net, mean, stdev);
  return net;
}

AdamWConfig adamw_from(const ScenarioConfig& cfg) {
  AdamWConfig a;
  a.lr = cfg.learning_rate;
  a.beta1 = cfg.beta1;
  a.beta2 = cfg.beta2;
  a.weight_decay = cfg.weight_decay;
  a.clip = cfg.grad_clip;
  return a;
}

std::vector<double> train_epochs(PolicyNetwork& net, OptimizerState& opt, const Dataset& data,
                                 const PhaseSetup& setup, double n, const LossWeights& weights,
                                 const TrainOptions& options, RandomStream& rng) {
  if (options.epochs < 0 || options.batch_size < 1) {
    throw Error(ErrorCode::Config, "epochs must be nonnegative and batch_size positive");
  }
  std::vector<double> history;
  if (options.epochs == 0) return history;
  if (data.empty()) throw Error(ErrorCode::EmptyBatch, "training on an empty dataset");

  const RowMatrix all_x = data.states();
  const RowMatrix all_u = data.controls();
  const Eigen::Index count = all_x.rows();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(count));
  std::iota(order.begin(), order.end(), Eigen::Index{0});

  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.below(i)]);
    }
    double weighted_sum = 0.0;
    for (Eigen::Index start = 0; start < count; start += options.batch_size) {
      const Eigen::Index rows = std::min<Eigen::Index>(options.batch_size, count - start);
      RowMatrix bx(rows, 6);
      RowMatrix bu(rows, 3);
      for (Eigen::Index r = 0; r < rows; ++r) {
        bx.row(r) = all_x.row(order[static_cast<std::size_t>(start + r)]);
        bu.row(r) = all_u.row(order[static_cast<std::size_t>(start + r)]);
      }
      TrainForward fwd = forward_train(net, bx, &rng);
      const TotalLoss loss = total_loss(bx, bu, fwd.outputs, weights, setup, n);
      if (!std::isfinite(loss.total)) {
        throw Error(ErrorCode::TrainingDiverged,
                    "non-finite loss in epoch " + std::to_string(epoch + 1));
      }
      const Gradients grads = backward(net, fwd.cache, loss.grad);
      optimizer_step(net, opt, grads);
      weighted_sum += loss.total * static_cast<double>(rows);
    }
    const double epoch_loss = weighted_sum / static_cast<double>(count);
    if (!std::isfinite(epoch_loss)) {
      throw Error(ErrorCode::TrainingDiverged, "non-finite epoch loss");
    }
    history.push_back(epoch_loss);
  }
  return history;
}

std::vector<double> pretrain_bc(PolicyNetwork& net, OptimizerState& opt, const Dataset& data,
                                const TrainOptions& options, RandomStream& rng) {
  // The imitation loss needs no barrier or Lyapunov data; any phase setup will do.
  static const PhaseSetup unused;
  return train_epochs(net, opt, data, unused, 0.0, LossWeights{1.0, 0.0, 0.0}, options, rng);
}

DaggerResult dagger_refine(PolicyNetwork& net, OptimizerState& opt, const Dataset& initial,
                           const Scenario& scenario, Phase phase, const DaggerSchedule& schedule,
                           const LossWeights& initial_weights, int batch_size,
                           RandomStream& rng) {
  validate(schedule);
  validate(initial_weights);
  const PhaseSetup& setup = scenario.phase(phase);
  const ScenarioConfig& cfg = scenario.config();
  const double n = scenario.mean_motion();

  DaggerResult result;
  result.aggregate = initial;
  LossWeights weights = initial_weights;

  for (int it = 1; it <= schedule.n_iter; ++it) {
    const double kappa = schedule.kappa(it);
    DaggerIterationMetrics m;
    m.iteration = it;
    m.kappa = kappa;
    m.lambda_cbf = weights.lambda_cbf;
    m.lambda_clf = weights.lambda_clf;
    m.min_h = std::numeric_limits<double>::infinity();
    double intervention_sum = 0.0;
    int intervention_count = 0;

    Dataset fresh;
    for (int r = 0; r < schedule.n_rollout; ++r) {
      RandomStream rr = rng.split(static_cast<std::uint64_t>(it) * 1000u +
                                  static_cast<std::uint64_t>(r));
      ExpertController expert(setup.ocp);
      StateVec x = scenario.sample_start(phase, rr);
      int dwell = 0;
      for (int k = 0; k < schedule.max_steps; ++k) {
        double h = 0.0;
        try {
          h = h_value(setup.barrier, x);
        } catch (const Error& e) {
          if (!is_undefined(e)) throw;
          break;
        }
        m.min_h = std::min(m.min_h, h);
        const ControlVec u_nn = forward(net, x);
        try {
          const FilterResult f = apply_filter(setup.filter, x, u_nn);
          intervention_sum += f.intervention;
          ++intervention_count;
        } catch (const Error& e) {
          if (e.code() != ErrorCode::HardInfeasible && !is_undefined(e)) throw;
        }
        ControlVec u = u_nn;
        try {
          const ControlVec u_star = expert.control(x);
          fresh.records.push_back({x, u_star, phase});
          u = kappa * u_star + (1.0 - kappa) * u_nn;
        } catch (const Error& e) {
          if (e.code() != ErrorCode::Infeasible) throw;
          ++m.expert_failures;
          expert.reset();
        }
        x = perturbed_step(x, u, scenario.model(), rr, cfg.w_max);
        if (!x.allFinite()) break;
        dwell = scenario.at_goal(phase, x) ? dwell + 1 : 0;
        if (dwell >= cfg.dwell_steps) break;
      }
    }
    m.samples_added = static_cast<int>(fresh.size());
    m.mean_intervention =
        intervention_count > 0 ? intervention_sum / intervention_count : 0.0;
    if (!std::isfinite(m.min_h)) m.min_h = 0.0;
    result.aggregate.append(fresh);

    const std::vector<double> history =
        train_epochs(net, opt, result.aggregate, setup, n, weights,
                     TrainOptions{schedule.n_epochs, batch_size}, rng);
    (void)history;
    // Report the unweighted loss components of the retrained network on the aggregate.
    if (!result.aggregate.empty()) {
      const RowMatrix xs = result.aggregate.states();
      const RowMatrix us = result.aggregate.controls();
      const RowMatrix out = forward_batch(net, xs);
      m.loss_imit = imitation_loss(out, us).value;
      m.loss_cbf = cbf_loss(xs, out, setup.barrier, n).value;
      m.loss_clf = clf_loss(xs, out, setup.clf, n).value;
    }
    result.metrics.push_back(m);
    weights.lambda_cbf *= 2.0;
    weights.lambda_clf *= 2.0;
  }
  result.final_weights = weights;
  return result;
}

void write_dagger_metrics(const std::vector<DaggerIterationMetrics>& metrics,
                          const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path + "'");
  out << "iteration,loss_imit,loss_cbf,loss_clf,min_h,mean_intervention\n";
  char buf[256];
  for (const auto& m : metrics) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", m.iteration,
                  m.loss_imit, m.loss_cbf, m.loss_clf, m.min_h, m.mean_intervention);
    out << buf;
  }
  if (!out) throw Error(ErrorCode::Io, "error writing '" + path + "'");
}

}  // namespace proxops
