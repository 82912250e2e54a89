#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "proxops/policy.hpp"
#include "proxops/scenario.hpp"

namespace proxops {

/// One expert demonstration: a visited state and the expert's first input there.
struct Sample {
  StateVec x = StateVec::Zero();
  ControlVec u = ControlVec::Zero();
  Phase phase = Phase::FlyAround;
};

/// Append-only collection of demonstrations.
struct Dataset {
  std::vector<Sample> records;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
  void append(const Dataset& other);
  /// Records of one phase, in order.
  Dataset filter(Phase p) const;
  /// States and controls stacked row-wise (size() x 6 and size() x 3).
  RowMatrix states() const;
  RowMatrix controls() const;
};

/// Throws CorruptDataset if a record is non-finite or a control leaves the box |u_i| <= u_max.
void validate(const Dataset& data, double u_max);

/// Binary dataset file ("DSET"); see README for the layout.
std::vector<std::uint8_t> serialize_dataset(const Dataset& data);
Dataset deserialize_dataset(const std::vector<std::uint8_t>& bytes);
void save_dataset(const Dataset& data, const std::string& path);
Dataset load_dataset(const std::string& path);

struct GenerationStats {
  int trajectories = 0;
  int resampled_starts = 0;   // starts where the expert had no solution
  int skipped_steps = 0;      // expert failures after the first step (trajectory cut short)
};

/// Rolls the expert out from random starts of the phase and records (x, u*) every step.
/// Trajectories stop at decision-point convergence, after `max_steps` steps, or when the
/// dataset holds `max_samples` records (0 = no sample limit). Starts at which the expert has no
/// solution are resampled.
Dataset generate_expert_dataset(const Scenario& scenario, Phase phase, int n_traj,
                                RandomStream& rng, int max_steps, std::size_t max_samples = 0,
                                GenerationStats* stats = nullptr);

/// Mean and standard deviation of the dataset states, per component.
void dataset_statistics(const Dataset& data, StateVec& mean, StateVec& stdev);

struct LossWeights {
  double lambda_imit = 100.0;
  double lambda_cbf = 1e-7;
  double lambda_clf = 1e-5;
};

/// Throws Config unless lambda_imit > 0 and the others are nonnegative.
void validate(const LossWeights& w);

/// A batch loss and its gradient with respect to the network outputs (B x 3).
struct LossValue {
  double value = 0.0;
  RowMatrix grad;
  int excluded = 0;  // samples skipped because the barrier is undefined there
};

/// Mean over the batch of ||u - u*||^2.
LossValue imitation_loss(const RowMatrix& outputs, const RowMatrix& expert);

/// Mean over the batch of max(0, -cbf_margin(x, u))^2. Samples at the cone apex are excluded
/// (counted in `excluded`) but still count in the batch size.
LossValue cbf_loss(const RowMatrix& states, const RowMatrix& outputs, const Barrier& barrier,
                   double n);

/// Mean over the batch of max(0, clf_margin(x, u))^2.
LossValue clf_loss(const RowMatrix& states, const RowMatrix& outputs, const ClfSpec& clf,
                   double n);

struct TotalLoss {
  double total = 0.0;
  double imit = 0.0;
  double cbf = 0.0;
  double clf = 0.0;
  RowMatrix grad;
};

/// lambda_imit L_imit + lambda_cbf L_cbf + lambda_clf L_clf; the barrier-based terms are only
/// evaluated when their weight is nonzero.
TotalLoss total_loss(const RowMatrix& states, const RowMatrix& expert, const RowMatrix& outputs,
                     const LossWeights& weights, const PhaseSetup& setup, double n);

/// Curriculum of the refinement loop: kappa_i = 1 - i / n_iter for i = 1..n_iter.
struct DaggerSchedule {
  int n_iter = 5;
  int n_rollout = 5;
  int n_epochs = 5;
  int max_steps = 1200;

  double kappa(int i) const;
  std::vector<double> kappas() const;
};

void validate(const DaggerSchedule& s);

struct TrainOptions {
  int epochs = 20;
  int batch_size = 128;
};

/// Creates the phase network from the scenario's training settings and freezes the input
/// standardization from `data`.
PolicyNetwork make_phase_policy(const ScenarioConfig& cfg, const Dataset& data,
                                RandomStream& rng);

AdamWConfig adamw_from(const ScenarioConfig& cfg);

/// Shuffled minibatch training on `data` with the given loss weights; returns the mean loss of
/// each epoch. Throws TrainingDiverged on a non-finite loss.
std::vector<double> train_epochs(PolicyNetwork& net, OptimizerState& opt, const Dataset& data,
                                 const PhaseSetup& setup, double n, const LossWeights& weights,
                                 const TrainOptions& options, RandomStream& rng);

/// Behavior cloning: train_epochs with the imitation loss alone (unit weight).
std::vector<double> pretrain_bc(PolicyNetwork& net, OptimizerState& opt, const Dataset& data,
                                const TrainOptions& options, RandomStream& rng);

struct DaggerIterationMetrics {
  int iteration = 0;
  double kappa = 0.0;
  double lambda_cbf = 0.0;
  double lambda_clf = 0.0;
  double loss_imit = 0.0;   // unweighted, retrained network on the aggregate
  double loss_cbf = 0.0;
  double loss_clf = 0.0;
  double min_h = 0.0;       // over all rollout states of the iteration
  double mean_intervention = 0.0;  // filter correction the learner would need, per visited state
  int samples_added = 0;
  int expert_failures = 0;
};

struct DaggerResult {
  Dataset aggregate;
  std::vector<DaggerIterationMetrics> metrics;
  LossWeights final_weights;
};

/// Refinement loop: per iteration, roll out the mixed policy kappa u* + (1 - kappa) u_nn,
/// relabel visited states with the expert, retrain on the aggregate with the total loss and
/// double lambda_cbf and lambda_clf. Rollout i of iteration k uses rng.split(k * 1000 + i).
DaggerResult dagger_refine(PolicyNetwork& net, OptimizerState& opt, const Dataset& initial,
                           const Scenario& scenario, Phase phase, const DaggerSchedule& schedule,
                           const LossWeights& initial_weights, int batch_size, RandomStream& rng);

/// CSV with columns iteration,loss_imit,loss_cbf,loss_clf,min_h,mean_intervention.
void write_dagger_metrics(const std::vector<DaggerIterationMetrics>& metrics,
                          const std::string& path);

}  // namespace proxops
