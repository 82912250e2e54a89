#include "proxops/nmpc.hpp"

#include <chrono>
#include <cmath>

namespace proxops {

NmpcSolver::NmpcSolver(OcpConfig cfg, ConstraintForm form) : cfg_(std::move(cfg)), form_(form) {
  const int n_steps = cfg_.horizon;
  if (n_steps < 1) throw Error(ErrorCode::Config, "horizon must be at least 1");
  if (!(cfg_.u_bound > 0.0)) throw Error(ErrorCode::Config, "u_bound must be positive");
  if (cfg_.barrier) validate(*cfg_.barrier);
  nu_ = 3 * n_steps;

  const Mat6& a = cfg_.model.a_d;
  const Mat63& b = cfg_.model.b_d;
  phi_.resize(n_steps + 1);
  gamma_.resize(n_steps + 1);
  phi_[0] = Mat6::Identity();
  gamma_[0] = Eigen::MatrixXd::Zero(6, nu_);
  for (int k = 0; k < n_steps; ++k) {
    phi_[k + 1] = a * phi_[k];
    gamma_[k + 1] = a * gamma_[k];
    gamma_[k + 1].middleCols(3 * k, 3) += b;
  }

  Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(nu_, nu_);
  Eigen::MatrixXd gx = Eigen::MatrixXd::Zero(nu_, 6);
  Eigen::MatrixXd gg = Eigen::MatrixXd::Zero(nu_, 6);
  for (int k = 1; k <= n_steps; ++k) {
    const Mat6& w = (k == n_steps) ? cfg_.p_mat : cfg_.q_mat;
    const Eigen::MatrixXd gtw = gamma_[k].transpose() * w;
    hess += gtw * gamma_[k];
    gx += gtw * phi_[k];
    gg -= gtw;
  }
  for (int k = 0; k < n_steps; ++k) hess.block(3 * k, 3 * k, 3, 3) += cfg_.r_mat;
  hess *= 2.0;
  gx *= 2.0;
  gg *= 2.0;
  cost_scale_ = hess.diagonal().maxCoeff();
  hess_ = hess / cost_scale_;
  hess_ = 0.5 * (hess_ + hess_.transpose()).eval();
  grad_x0_ = gx / cost_scale_;
  grad_goal_ = (gg / cost_scale_) * cfg_.goal;

  const int box_stages = n_steps + (cfg_.terminal_box ? 1 : 0);
  box_rows_.resize(12 * box_stages, nu_);
  box_rhs_const_.resize(12 * box_stages);
  box_rhs_x0_.resize(12 * box_stages, 6);
  int row = 0;
  auto add_box = [&](int k, const StateVec& lo, const StateVec& hi) {
    for (int i = 0; i < 6; ++i) {
      box_rows_.row(row) = gamma_[k].row(i);
      box_rhs_const_(row) = lo(i);
      box_rhs_x0_.row(row) = phi_[k].row(i);
      ++row;
      box_rows_.row(row) = -gamma_[k].row(i);
      box_rhs_const_(row) = -hi(i);
      box_rhs_x0_.row(row) = -phi_[k].row(i);
      ++row;
    }
  };
  StateVec half;
  half << cfg_.pos_box, cfg_.vel_box;
  for (int k = 1; k <= n_steps; ++k) add_box(k, -half, half);
  if (cfg_.terminal_box) {
    add_box(n_steps, cfg_.goal - *cfg_.terminal_box, cfg_.goal + *cfg_.terminal_box);
  }
}

Eigen::Matrix<double, Eigen::Dynamic, 6, Eigen::RowMajor> NmpcSolver::predict(
    const StateVec& x0, const Eigen::VectorXd& u) const {
  Eigen::Matrix<double, Eigen::Dynamic, 6, Eigen::RowMajor> xs(cfg_.horizon + 1, 6);
  StateVec x = x0;
  xs.row(0) = x.transpose();
  for (int k = 0; k < cfg_.horizon; ++k) {
    x = cfg_.model.a_d * x + cfg_.model.b_d * u.segment<3>(3 * k);
    xs.row(k + 1) = x.transpose();
  }
  return xs;
}

double NmpcSolver::cost(const StateVec& x0, const Eigen::VectorXd& u) const {
  const Eigen::VectorXd g = grad_x0_ * x0 + grad_goal_;
  return 0.5 * u.dot(hess_ * u) + g.dot(u);
}

NmpcSolver::Linearized NmpcSolver::linearize_safety(const StateVec& x0,
                                                    const Eigen::VectorXd& u) const {
  Linearized lin;
  if (!cfg_.barrier) {
    lin.rows.resize(0, nu_);
    lin.rhs.resize(0);
    return lin;
  }
  const auto xs = predict(x0, u);
  const int n_steps = cfg_.horizon;
  lin.rows.resize(n_steps, nu_);
  lin.rhs.resize(n_steps);
  for (int k = 0; k < n_steps; ++k) {
    if (form_ == ConstraintForm::InputConstrainedCbf) {
      const StateVec xk = xs.row(k).transpose();
      const ControlVec uk = u.segment<3>(3 * k);
      const MarginLinearization m = cbf_margin_linearized(*cfg_.barrier, xk, uk, cfg_.mean_motion);
      Eigen::RowVectorXd r = m.d_dx * gamma_[k];
      r.segment<3>(3 * k) += m.d_du.transpose();
      lin.rows.row(k) = r;
      lin.rhs(k) = cfg_.epsilon - m.value + r.dot(u);
    } else {
      const StateVec xk = xs.row(k + 1).transpose();
      const MarginLinearization m = h_linearized(*cfg_.barrier, xk);
      const Eigen::RowVectorXd r = m.d_dx * gamma_[k + 1];
      lin.rows.row(k) = r;
      lin.rhs(k) = -m.value + r.dot(u);
    }
  }
  return lin;
}

double NmpcSolver::violation(const StateVec& x0, const Eigen::VectorXd& u) const {
  if (!cfg_.barrier) return 0.0;
  const auto xs = predict(x0, u);
  double v = 0.0;
  for (int k = 0; k < cfg_.horizon; ++k) {
    if (form_ == ConstraintForm::InputConstrainedCbf) {
      const double m = cbf_margin(*cfg_.barrier, xs.row(k).transpose(),
                                  u.segment<3>(3 * k), cfg_.mean_motion);
      v += std::max(0.0, cfg_.epsilon - m);
    } else {
      v += std::max(0.0, -h_value(*cfg_.barrier, xs.row(k + 1).transpose()));
    }
  }
  return v;
}

double NmpcSolver::box_violation(const Eigen::VectorXd& box_rhs, const Eigen::VectorXd& u) const {
  if (box_rows_.rows() == 0) return 0.0;
  return (box_rhs - box_rows_ * u).cwiseMax(0.0).sum();
}

ExpertSolution NmpcSolver::solve(const StateVec& x0, const ExpertSolution* warm) const {
  const auto t_start = std::chrono::steady_clock::now();
  if (!x0.allFinite()) throw Error(ErrorCode::NumericalFailure, "non-finite initial state");
  const int n_steps = cfg_.horizon;

  Eigen::VectorXd u = Eigen::VectorXd::Zero(nu_);
  std::vector<int> active;
  if (warm) {
    if (warm->u_seq.rows() != n_steps) {
      throw Error(ErrorCode::ShapeError, "warm start horizon does not match the OCP");
    }
    for (int k = 0; k < n_steps; ++k) u.segment<3>(3 * k) = warm->u_seq.row(k).transpose();
    active = warm->active_set;
  }
  u = u.cwiseMax(-cfg_.u_bound).cwiseMin(cfg_.u_bound);

  QpProblem qp;
  qp.hess = hess_;
  qp.grad = grad_x0_ * x0 + grad_goal_;
  qp.lower = Eigen::VectorXd::Constant(nu_, -cfg_.u_bound);
  qp.upper = Eigen::VectorXd::Constant(nu_, cfg_.u_bound);
  const Eigen::VectorXd box_rhs = box_rhs_const_ - box_rhs_x0_ * x0;
  const int n_box = static_cast<int>(box_rows_.rows());
  const int n_safe = cfg_.barrier ? n_steps : 0;
  qp.ineq_mat.resize(n_box + n_safe, nu_);
  qp.ineq_vec.resize(n_box + n_safe);
  qp.ineq_mat.topRows(n_box) = box_rows_;
  qp.ineq_vec.head(n_box) = box_rhs;

  ExpertSolution out;
  out.status = SolveStatus::MaxIter;
  double mu = 0.0;
  for (int it = 1; it <= cfg_.max_sqp_iter; ++it) {
    out.sqp_iters = it;
    const Linearized lin = linearize_safety(x0, u);
    if (n_safe > 0) {
      qp.ineq_mat.bottomRows(n_safe) = lin.rows;
      qp.ineq_vec.tail(n_safe) = lin.rhs;
    }
    QpWarmStart ws;
    ws.z = u;
    ws.active_set = active;
    const QpSolution sol = solve_qp(qp, ws);
    if (sol.status != QpStatus::Optimal) {
      if (it == 1) out.status = sol.status;
      break;
    }
    active = sol.active_set;
    const Eigen::VectorXd d = sol.z - u;
    if (d.cwiseAbs().maxCoeff() <= cfg_.step_tol) {
      u = sol.z;
      out.status = SolveStatus::Optimal;
      break;
    }

    // l1 merit with backtracking.
    if (sol.ineq_multipliers.size() > 0) {
      mu = std::max(mu, 1.5 * sol.ineq_multipliers.cwiseAbs().maxCoeff() + 1e-9);
    }
    const double viol0 = violation(x0, u) + box_violation(box_rhs, u);
    const double merit0 = cost(x0, u) + mu * viol0;
    const double slope = (hess_ * u + qp.grad).dot(d) - mu * viol0;
    double alpha = 1.0;
    bool accepted = false;
    Eigen::VectorXd trial;
    double merit_trial = merit0;
    for (int bt = 0; bt <= 10; ++bt) {
      trial = u + alpha * d;
      merit_trial = cost(x0, trial) + mu * (violation(x0, trial) + box_violation(box_rhs, trial));
      // The small absolute allowance absorbs round-off once the iterate is near a solution.
      if (merit_trial <= merit0 + 1e-4 * alpha * std::min(slope, 0.0) +
                             1e-12 * (1.0 + std::abs(merit0))) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) break;
    u = trial;
    out.merit_history.push_back(merit_trial);
  }

  if (out.status == SolveStatus::Optimal && n_safe > 0) {
    // Re-check the nonlinear constraints at the returned iterate.
    if (violation(x0, u) > 1e-6 * n_steps) {
      out.status = SolveStatus::MaxIter;
    }
  }
  // Accumulated SQP steps can overshoot an active input bound by round-off; project back.
  u = u.cwiseMax(-cfg_.u_bound).cwiseMin(cfg_.u_bound);
  out.u_seq.resize(n_steps, 3);
  for (int k = 0; k < n_steps; ++k) out.u_seq.row(k) = u.segment<3>(3 * k).transpose();
  out.x_pred = predict(x0, u);
  out.active_set = active;
  out.solve_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return out;
}

ExpertSolution solve_ocp(const OcpConfig& cfg, const StateVec& x0, const ExpertSolution* warm) {
  return NmpcSolver(cfg, ConstraintForm::InputConstrainedCbf).solve(x0, warm);
}

ExpertSolution naive_position_constrained_ocp(const OcpConfig& cfg, const StateVec& x0,
                                              const ExpertSolution* warm) {
  return NmpcSolver(cfg, ConstraintForm::PositionOnly).solve(x0, warm);
}

ExpertSolution shift_solution(const ExpertSolution& sol) {
  ExpertSolution shifted = sol;
  const auto n = sol.u_seq.rows();
  for (Eigen::Index k = 0; k + 1 < n; ++k) shifted.u_seq.row(k) = sol.u_seq.row(k + 1);
  // The working set refers to the unshifted stages; drop it.
  shifted.active_set.clear();
  return shifted;
}

ControlVec ExpertController::control(const StateVec& x) {
  const ExpertSolution* warm = nullptr;
  std::optional<ExpertSolution> shifted;
  if (last_ && last_->status != SolveStatus::Infeasible) {
    shifted = shift_solution(*last_);
    warm = &*shifted;
  }
  ExpertSolution sol = solver_.solve(x, warm);
  if (sol.status == SolveStatus::Infeasible) {
    last_.reset();
    throw Error(ErrorCode::Infeasible, "expert OCP is infeasible at the current state");
  }
  last_ = std::move(sol);
  return last_->first_input();
}

}  // namespace proxops
