#pragma once

#include <optional>
#include <vector>

#include "proxops/certificates.hpp"
#include "proxops/numerics.hpp"
#include "proxops/types.hpp"

namespace proxops {

/// Finite-horizon optimal control problem of the CBF-constrained expert.
struct OcpConfig {
  int horizon = 10;
  Mat6 q_mat = Mat6::Identity();
  Mat3 r_mat = 1e4 * Mat3::Identity();
  Mat6 p_mat = Mat6::Identity();  // terminal weight
  DiscreteModel model;
  double mean_motion = 0.0;
  std::optional<Barrier> barrier;
  double epsilon = 0.01;
  double u_bound = 0.082;
  StateVec goal = StateVec::Zero();
  Vec3 pos_box = Vec3::Constant(40.0);  // |p_i| <= pos_box_i
  Vec3 vel_box = Vec3::Constant(1.0);   // |v_i| <= vel_box_i
  std::optional<StateVec> terminal_box; // |x_N - goal| <= terminal_box, elementwise
  int max_sqp_iter = 30;
  double step_tol = 1e-8;
};

using SolveStatus = QpStatus;

struct ExpertSolution {
  Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> u_seq;
  Eigen::Matrix<double, Eigen::Dynamic, 6, Eigen::RowMajor> x_pred;
  SolveStatus status = SolveStatus::MaxIter;
  int sqp_iters = 0;
  double solve_time = 0.0;  // [s]
  /// Merit value after each accepted SQP step.
  std::vector<double> merit_history;
  /// QP working set of the final iterate, reused as a warm start.
  std::vector<int> active_set;

  ControlVec first_input() const { return u_seq.row(0).transpose(); }
};

/// Which form of the safety constraint the SQP enforces at each stage.
enum class ConstraintForm {
  /// CBF margin of the input-constrained transform >= epsilon at stages 0..N-1.
  InputConstrainedCbf,
  /// Position constraint h(x_k) >= 0 at stages 1..N (the naive expert).
  PositionOnly,
};

/// Condensed SQP solver for the OCP; carries the prediction matrices for one configuration.
class NmpcSolver {
 public:
  explicit NmpcSolver(OcpConfig cfg, ConstraintForm form = ConstraintForm::InputConstrainedCbf);

  ExpertSolution solve(const StateVec& x0, const ExpertSolution* warm = nullptr) const;

  const OcpConfig& config() const { return cfg_; }

  /// Predicted trajectory for a stacked input sequence (3N).
  Eigen::Matrix<double, Eigen::Dynamic, 6, Eigen::RowMajor> predict(
      const StateVec& x0, const Eigen::VectorXd& u_stacked) const;

  /// Quadratic cost (without the constant term) of a stacked input sequence, in solver scaling.
  double cost(const StateVec& x0, const Eigen::VectorXd& u_stacked) const;

 private:
  struct Linearized {
    Eigen::MatrixXd rows;
    Eigen::VectorXd rhs;
  };

  Linearized linearize_safety(const StateVec& x0, const Eigen::VectorXd& u) const;
  double violation(const StateVec& x0, const Eigen::VectorXd& u) const;
  double box_violation(const Eigen::VectorXd& box_rhs, const Eigen::VectorXd& u) const;

  OcpConfig cfg_;
  ConstraintForm form_;
  int nu_ = 0;
  std::vector<Mat6> phi_;              // A^k, k = 0..N
  std::vector<Eigen::MatrixXd> gamma_; // d x_k / d U, k = 0..N
  Eigen::MatrixXd hess_;               // scaled condensed Hessian
  Eigen::MatrixXd grad_x0_;            // gradient = grad_x0_ * x0 + grad_goal_ (scaled)
  Eigen::VectorXd grad_goal_;
  double cost_scale_ = 1.0;
  Eigen::MatrixXd box_rows_;           // state box rows acting on U
  Eigen::VectorXd box_rhs_const_;
  Eigen::MatrixXd box_rhs_x0_;         // rhs = box_rhs_const_ - box_rhs_x0_ * x0
};

/// Solves the OCP with the input-constrained CBF constraint.
ExpertSolution solve_ocp(const OcpConfig& cfg, const StateVec& x0,
                         const ExpertSolution* warm = nullptr);

/// Same problem with h(x_k) >= 0 in place of the CBF constraint.
ExpertSolution naive_position_constrained_ocp(const OcpConfig& cfg, const StateVec& x0,
                                              const ExpertSolution* warm = nullptr);

/// Receding-horizon expert: applies the first input and keeps the solution for warm starting.
class ExpertController {
 public:
  explicit ExpertController(OcpConfig cfg,
                            ConstraintForm form = ConstraintForm::InputConstrainedCbf)
      : solver_(std::move(cfg), form) {}

  /// Returns u*_0. Throws Error(Infeasible) when the OCP has no solution.
  ControlVec control(const StateVec& x);

  const std::optional<ExpertSolution>& last() const { return last_; }
  void reset() { last_.reset(); }
  const NmpcSolver& solver() const { return solver_; }

 private:
  NmpcSolver solver_;
  std::optional<ExpertSolution> last_;
};

/// Shifts a solution by one stage, repeating the last input.
ExpertSolution shift_solution(const ExpertSolution& sol);

}  // namespace proxops
