#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "proxops/policy.hpp"
#include "proxops/scenario.hpp"

namespace proxops {

/// The five policies of the ablation: (i) NMPC with position constraints, (ii) LQR, (iii) the
/// CBF-constrained NMPC expert, (iv) the behavior-cloned network, (v) the DAgger network trained
/// with the barrier/Lyapunov loss.
enum class PolicyKind { NmpcNaive, Lqr, Nmpc, Bc, Ours };

const char* to_string(PolicyKind p);
/// Accepts the CLI spelling: nmpc-naive, lqr, nmpc, bc, ours.
PolicyKind parse_policy(const std::string& s);
/// Whether the policy is filtered by default: LQR and ours.
bool filtered_by_default(PolicyKind p);

/// Trained networks, one per phase (index by static_cast<int>(Phase)).
struct PolicyAssets {
  std::array<std::optional<PolicyNetwork>, 2> bc;
  std::array<std::optional<PolicyNetwork>, 2> ours;

  /// Throws MissingAsset when the network is not loaded.
  const PolicyNetwork& network(PolicyKind p, Phase phase) const;
};

/// A state-feedback controller; stateful implementations (the NMPC warm start) reset per run.
class Controller {
 public:
  virtual ~Controller() = default;
  /// Throws Error(Infeasible) if no control exists.
  virtual ControlVec act(const StateVec& x) = 0;
  virtual void reset() {}
};

/// Discrete LQR gain K = (R + B'PB)^-1 B'PA for the scenario's weights.
Eigen::Matrix<double, 3, 6> lqr_gain(const Scenario& scenario);

/// u = clip(-K (x - goal)) with the box |u_i| <= u_max.
std::unique_ptr<Controller> lqr_policy(const Scenario& scenario, Phase phase);

std::unique_ptr<Controller> make_controller(PolicyKind kind, const Scenario& scenario,
                                            Phase phase, const PolicyAssets& assets);

enum class RolloutStatus {
  Converged,         // inside the decision-point tolerances for the dwell period
  MaxSteps,          // step cap reached
  ExpertInfeasible,  // the NMPC policy had no solution
  FilterInfeasible,  // the filter found no input satisfying the barrier condition
  Undefined,         // a margin was evaluated where it is not defined (cone apex)
};

const char* to_string(RolloutStatus s);

/// One logged sample. The final row of a log carries the terminal state; its control-dependent
/// fields are NaN.
struct LogRow {
  double t = 0.0;
  StateVec x = StateVec::Zero();
  ControlVec u_policy = ControlVec::Zero();
  ControlVec u_filtered = ControlVec::Zero();  // applied input (equals u_policy unfiltered)
  double h = 0.0;
  double big_h = 0.0;
  double cbf_margin = 0.0;  // at the applied input
  double v = 0.0;
  double clf_margin = 0.0;  // at the applied input
  double delta = 0.0;
  double intervention = 0.0;
  double policy_ms = 0.0;
  double filter_ms = 0.0;
  bool filter_optimal = false;  // the filter ran and its QP reported Optimal
};

struct RolloutLog {
  PolicyKind policy = PolicyKind::Nmpc;
  bool filtered = false;
  Phase phase = Phase::FlyAround;
  std::uint64_t seed = 0;
  RolloutStatus status = RolloutStatus::MaxSteps;
  int infeasible_events = 0;  // expert or filter infeasibility
  std::vector<LogRow> rows;   // steps + 1 rows

  int steps() const { return rows.empty() ? 0 : static_cast<int>(rows.size()) - 1; }
  double min_h() const;
  double delta_v() const;  // sum of ||u_applied|| ts
  double terminal_position_error(const StateVec& goal) const;
  double terminal_velocity_error(const StateVec& goal) const;
  double mean_intervention() const;
  double max_intervention() const;
};

struct RolloutOptions {
  PolicyKind policy = PolicyKind::Nmpc;
  bool use_filter = false;
  Phase phase = Phase::FlyAround;
  int max_steps = 1200;
  std::uint64_t seed = 0;
  std::optional<StateVec> start;  // random safe start from the seed when empty
  bool stop_at_goal = true;
  bool record_timing = true;      // false writes zero times (bit-reproducible logs)
};

/// Closed-loop simulation with perturbed dynamics. Failures of the expert or filter end the log
/// with the matching status; they are not thrown.
RolloutLog rollout(const Scenario& scenario, const PolicyAssets& assets,
                   const RolloutOptions& options);

/// Rollout with an already-built controller (used by the mission runner and tools).
RolloutLog rollout_with(const Scenario& scenario, Controller& controller,
                        const RolloutOptions& options, RandomStream& disturbance);

/// Fly-around to the first decision point, station keeping there, then final approach.
struct MissionResult {
  RolloutLog fly_around;
  RolloutLog hold;
  RolloutLog approach;

  bool converged_both() const;
  double delta_v() const;
  double min_h_fly_around() const;  // over fly-around and hold
  double min_h_approach() const;
};

MissionResult run_mission(const Scenario& scenario, const PolicyAssets& assets, PolicyKind policy,
                          bool use_filter, std::uint64_t seed, const StateVec& start,
                          int max_steps_per_phase, bool record_timing = true);

struct InterventionSummary {
  std::vector<double> run_mean;
  std::vector<double> run_max;
  std::vector<double> run_rate;
  double mean = 0.0;       // mean of the per-run means
  double max = 0.0;        // largest single intervention
  double rate = 0.0;       // mean activation rate
};

/// Per-run mean/max of ||u_sf - u_nn|| and the fraction of steps with intervention > 1e-9.
/// Throws EmptyBatch for an empty collection.
InterventionSummary intervention_stats(const std::vector<RolloutLog>& logs);

struct AblationRow {
  PolicyKind policy = PolicyKind::Nmpc;
  bool filtered = false;
  Phase phase = Phase::FlyAround;
  int runs = 0;
  int converged = 0;
  int infeasible_events = 0;
  int safety_violations = 0;  // runs with min h < 0
  double min_h = 0.0;
  double mean_terminal_error = 0.0;
  double mean_delta_v = 0.0;
  double mean_intervention = 0.0;
  double max_intervention = 0.0;
  double mean_step_ms = 0.0;
  double peak_step_ms = 0.0;
};

struct AblationReport {
  std::vector<AblationRow> rows;
  bool include_timing = true;
};

struct AblationOptions {
  std::vector<std::uint64_t> seeds;
  int max_steps = 1200;
  bool include_timing = true;
  std::vector<PolicyKind> policies{PolicyKind::NmpcNaive, PolicyKind::Lqr, PolicyKind::Nmpc,
                                   PolicyKind::Bc, PolicyKind::Ours};
};

/// Runs every policy (with its default filtering) over both phases and all seeds from random
/// safe starts. Throws MissingAsset if a network policy is requested without weights.
AblationReport run_ablation(const Scenario& scenario, const PolicyAssets& assets,
                            const AblationOptions& options);

struct TimingRow {
  std::string name;
  int samples = 0;
  double mean_ms = 0.0;
  double peak_ms = 0.0;
};

/// Wall-clock per-step cost of each configuration on `n_steps` states visited by the expert in
/// the fly-around phase: nmpc-naive, lqr+filter, nmpc, nn (ours without filter), nn+filter.
std::vector<TimingRow> benchmark_runtime(const Scenario& scenario, const PolicyAssets& assets,
                                         int n_steps, std::uint64_t seed);

/// Column order of the rollout CSV.
extern const char* const kRolloutCsvHeader;

/// Writes the log as CSV with 17 significant digits (exact decimal round trip).
void export_csv(const RolloutLog& log, const std::string& path);
/// Parses a rollout CSV back into rows (t, state, inputs, margins and times).
std::vector<LogRow> import_csv(const std::string& path);

std::string format_report(const AblationReport& report);
void export_report(const AblationReport& report, const std::string& path);

std::string format_timing(const std::vector<TimingRow>& rows);

}  // namespace proxops
