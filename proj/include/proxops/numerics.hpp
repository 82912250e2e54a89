#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "proxops/types.hpp"

namespace proxops {

/// Zero-order-hold discretization of the relative dynamics.
struct DiscreteModel {
  Mat6 a_d = Mat6::Identity();
  Mat63 b_d = Mat63::Zero();
  double ts = 0.0;
};

/// Matrix exponential by scaling and squaring with a (6,6) Pade approximant.
Eigen::MatrixXd expm(const Eigen::MatrixXd& m);

/// Exact ZOH pair for arbitrary dimensions, via the exponential of [[A, B], [0, 0]] * ts.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> zoh_discretize_general(const Eigen::MatrixXd& a_c,
                                                                   const Eigen::MatrixXd& b_c,
                                                                   double ts);

DiscreteModel zoh_discretize(const Mat6& a_c, const Mat63& b_c, double ts);

/// Stabilizing solution of the discrete algebraic Riccati equation
///   P = A'PA - A'PB (R + B'PB)^-1 B'PA + Q
/// by the structured doubling algorithm. Throws NoConvergence on divergence.
Eigen::MatrixXd solve_dare_general(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                   const Eigen::MatrixXd& q, const Eigen::MatrixXd& r);

Mat6 solve_dare(const DiscreteModel& model, const Mat6& q, const Mat3& r);

/// ||A'PA - P - A'PB (R + B'PB)^-1 B'PA + Q||_F
double dare_residual(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const Eigen::MatrixXd& q,
                     const Eigen::MatrixXd& r, const Eigen::MatrixXd& p);

/// min 0.5 z'Hz + g'z  s.t.  C z >= d,  lower <= z <= upper.
/// Bounds may be +-infinity.
struct QpProblem {
  Eigen::MatrixXd hess;
  Eigen::VectorXd grad;
  Eigen::MatrixXd ineq_mat;
  Eigen::VectorXd ineq_vec;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  int num_vars() const { return static_cast<int>(grad.size()); }
  int num_ineq() const { return static_cast<int>(ineq_vec.size()); }
};

enum class QpStatus { Optimal, Infeasible, MaxIter };

const char* to_string(QpStatus s);

struct QpSolution {
  Eigen::VectorXd z;
  QpStatus status = QpStatus::MaxIter;
  double kkt_residual = 0.0;
  /// Multipliers of the general rows (size m) and of the bounds (size n, signed:
  /// positive on an active lower bound, negative on an active upper bound).
  Eigen::VectorXd ineq_multipliers;
  Eigen::VectorXd bound_multipliers;
  /// Working set at termination, in the solver's constraint indexing (see QpWarmStart).
  std::vector<int> active_set;
  int iterations = 0;
};

/// Constraint indices: [0, m) general rows, [m, m+n) lower bounds, [m+n, m+2n) upper bounds.
struct QpWarmStart {
  std::optional<Eigen::VectorXd> z;
  std::vector<int> active_set;
};

struct QpOptions {
  int max_iter = 200;
  double feas_tol = 1e-9;
};

/// Dense primal active-set QP with an elastic phase 1. Hessian must be symmetric positive definite.
QpSolution solve_qp(const QpProblem& problem, const QpWarmStart& warm = {},
                    const QpOptions& options = {});

/// Stationarity, primal feasibility and complementarity residual of a candidate primal/dual pair.
double qp_kkt_residual(const QpProblem& problem, const Eigen::VectorXd& z,
                       const Eigen::VectorXd& ineq_multipliers,
                       const Eigen::VectorXd& bound_multipliers);

using VectorFunction = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

/// Central-difference Jacobian; throws NumericalFailure if f is not finite at a probe point.
Eigen::MatrixXd finite_diff_jacobian(const VectorFunction& f, const Eigen::VectorXd& x,
                                     double eps = 1e-6);

}  // namespace proxops
