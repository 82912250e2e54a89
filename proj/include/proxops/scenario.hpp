#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "proxops/certificates.hpp"
#include "proxops/dynamics.hpp"
#include "proxops/filter.hpp"
#include "proxops/nmpc.hpp"
#include "proxops/random.hpp"

namespace proxops {

/// Mission phase; selects the active barrier and goal.
enum class Phase : std::uint8_t { FlyAround = 0, FinalApproach = 1 };

const char* to_string(Phase p);
/// Accepts "flyaround" / "approach" (the CLI spelling).
Phase parse_phase(const std::string& s);

/// Every tunable of the scenario. Defaults are the reference mission parameters; the config
/// file overrides individual keys section by section.
struct ScenarioConfig {
  // [orbit]
  double mu = 3.986004418e14;   // [m^3/s^2]
  double altitude = 4.0e5;      // [m]
  double body_radius = 6.371e6; // [m]

  // [geometry]
  double az_radius = 40.0;
  double koz_radius = 10.0;
  double cone_half_angle_deg = 3.0;
  Vec3 cone_axis = Vec3::UnitY();
  /// Positive normalization of the cone barrier; empty means 1 / (1 - cos(half_angle)), which
  /// makes h equal 1 on the axis so that the shared epsilon is attainable.
  std::optional<double> cone_scale;
  StateVec goal_fly_around = make_state(0, 15, 0, 0, 0, 0);
  StateVec goal_capture = make_state(0, 2.3, 0, 0, 0, 0);
  double min_range_report = 2.0;

  // [control]
  double u_max = 0.082;
  double u_max_scalar = 0.082;
  double ts = 0.1;
  int horizon = 10;
  StateVec q_diag = StateVec::Ones();
  Vec3 r_diag = Vec3::Constant(1e4);
  double pos_box = 40.0;
  double vel_box = 1.0;
  std::optional<StateVec> terminal_box;
  int max_sqp_iter = 30;

  // [certificates]
  double gamma_sphere = 0.5;
  double gamma_cone = 1.0;
  double epsilon = 0.01;
  double slack_weight = 0.001;
  double sigmoid_j = 1.0;
  double sigmoid_c = 15.0;
  double zeta_min = 0.001;
  double zeta_max = 0.06;

  // [simulation]
  double w_max = 1e-5;
  std::uint64_t seed = 1;
  int max_steps = 1200;
  int hold_steps = 100;
  double conv_pos_tol = 0.1;
  double conv_vel_tol = 0.01;
  int dwell_steps = 50;
  StateVec start = make_state(-3, -30, 2, 0, 0, 0);

  // [training]
  int samples_per_phase = 10000;
  int bc_epochs = 20;
  int batch_size = 128;
  int dagger_iters = 5;
  int dagger_rollouts = 5;
  int dagger_epochs = 5;
  int dagger_max_steps = 1200;
  double lambda_imit = 100.0;
  double lambda_cbf = 1e-7;
  double lambda_clf = 1e-5;
  double learning_rate = 1e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double grad_clip = 0.5;
  double dropout = 0.1;
  int hidden_width = 256;
  int hidden_layers = 4;
};

/// Throws Error(Config) naming the offending field.
void validate(const ScenarioConfig& cfg);

/// Parses the sectioned key = value format. Unknown sections or keys, malformed values and
/// duplicate keys are errors reported with the line number. The result is validated.
ScenarioConfig parse_scenario(const std::string& text, const std::string& source = "<config>");
ScenarioConfig load_scenario(const std::string& path);

/// Barrier, CLF, expert and filter configuration of one phase.
struct PhaseSetup {
  Phase phase = Phase::FlyAround;
  StateVec goal = StateVec::Zero();
  Barrier barrier;
  ClfSpec clf;
  OcpConfig ocp;
  FilterConfig filter;
};

/// Scenario with every derived quantity (mean motion, discrete model, Riccati matrix) computed
/// once.
class Scenario {
 public:
  explicit Scenario(ScenarioConfig cfg);

  const ScenarioConfig& config() const { return cfg_; }
  const OrbitParams& orbit() const { return orbit_; }
  double mean_motion() const { return orbit_.n; }
  const DiscreteModel& model() const { return model_; }
  const Mat6& riccati() const { return p_mat_; }
  const PhaseSetup& phase(Phase p) const { return p == Phase::FlyAround ? fly_ : approach_; }

  /// Random start inside the phase's safe region with h >= 0.5 and H >= 0.5.
  /// Fly-around: position uniform in the Approach Zone ball (less a 5 m margin to the state box)
  /// outside the KOZ; approach: range 12-18 m inside the corridor. Velocities are small.
  StateVec sample_start(Phase p, RandomStream& rng) const;

  /// Position and velocity within the convergence tolerances of the phase goal.
  bool at_goal(Phase p, const StateVec& x) const;

 private:
  ScenarioConfig cfg_;
  OrbitParams orbit_;
  DiscreteModel model_;
  Mat6 p_mat_;
  PhaseSetup fly_;
  PhaseSetup approach_;
};

}  // namespace proxops
