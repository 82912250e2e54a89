#include "proxops/filter.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <optional>

#include "proxops/dynamics.hpp"

namespace proxops {

namespace {

// Working sets are reported in the three-row layout (barrier, Lyapunov, next-sample,
// then the bounds). The two-row problem shifts every bound index down by one.
constexpr int kRowsWithHold = 3;

std::vector<int> to_two_row_layout(const std::vector<int>& active) {
  std::vector<int> out;
  for (int i : active) {
    if (i < 2) out.push_back(i);
    else if (i >= kRowsWithHold) out.push_back(i - 1);
  }
  return out;
}

std::vector<int> from_two_row_layout(const std::vector<int>& active) {
  std::vector<int> out;
  for (int i : active) out.push_back(i < 2 ? i : i + 1);
  return out;
}

}  // namespace

void validate(const FilterConfig& cfg) {
  validate(cfg.barrier);
  validate(cfg.clf);
  if (!(cfg.slack_weight > 0.0)) throw Error(ErrorCode::Config, "slack_weight must be positive");
  if (!(cfg.epsilon >= 0.0)) throw Error(ErrorCode::Config, "epsilon must be nonnegative");
  if (!(cfg.u_bound > 0.0)) throw Error(ErrorCode::Config, "u_bound must be positive");
}

std::optional<AffineInU> next_sample_row(const FilterConfig& cfg, const StateVec& x) {
  if (!cfg.hold_model) return std::nullopt;
  // Keep H(x+) >= eps / gamma for x+ = A x + B u. That level matters because at dh/dt = 0 the
  // barrier margin reduces to gamma H, so below it the barrier row has no admissible input.
  // With h+ bounded below by h_lb over the box, the target holds whenever
  // dh/dt(x+) >= -sqrt(2 u_max (h_lb - eps / gamma)), which is affine in u after linearizing
  // dh/dt about the unforced successor (B u moves the position by < 1 mm).
  const StateVec x_free = cfg.hold_model->a_d * x;
  const BarrierJet j = barrier_jet(cfg.barrier, x_free, cfg.mean_motion);
  const Eigen::Matrix<double, 6, 3>& b = cfg.hold_model->b_d;
  const double h_lb = j.h - cfg.u_bound * (j.dh_dx * b).cwiseAbs().sum();
  AffineInU row;
  row.slope = (j.dh_dot_dx * b).transpose();
  const double level = cfg.epsilon / barrier_gamma(cfg.barrier);
  row.offset =
      j.h_dot + std::sqrt(2.0 * barrier_u_max(cfg.barrier) * std::max(0.0, h_lb - level));
  return row;
}

FilterResult apply_filter(const FilterConfig& cfg, const StateVec& x, const ControlVec& u_nn,
                          const std::vector<int>* warm_active) {
  const auto t_start = std::chrono::steady_clock::now();
  if (!x.allFinite() || !u_nn.allFinite()) {
    throw Error(ErrorCode::NumericalFailure, "non-finite state or nominal input");
  }
  const AffineInU cbf = cbf_margin_affine(cfg.barrier, x, cfg.mean_motion);
  const AffineInU clf = clf_margin_affine(cfg.clf, x, cfg.mean_motion);

  // The CBF row is the only one that can make the problem infeasible (delta is free), and over a
  // box its best value is attained at a vertex.
  const double best_cbf = cbf.offset + cfg.u_bound * cbf.slope.cwiseAbs().sum();
  if (best_cbf < cfg.epsilon) {
    throw Error(ErrorCode::HardInfeasible,
                "no admissible input satisfies the barrier condition (best margin " +
                    std::to_string(best_cbf) + ")");
  }

  const ControlVec u0 = u_nn.cwiseMax(-cfg.u_bound).cwiseMin(cfg.u_bound);

  const std::optional<AffineInU> hold_row = next_sample_row(cfg, x);

  QpProblem qp;
  qp.hess = Eigen::Matrix4d::Zero();
  qp.hess.diagonal() << 2.0, 2.0, 2.0, 2.0 * cfg.slack_weight;
  qp.grad = Eigen::Vector4d::Zero();
  qp.grad.head<3>() = -2.0 * u_nn;
  qp.ineq_mat = Eigen::MatrixXd::Zero(2, 4);
  qp.ineq_vec.resize(2);
  qp.ineq_mat.block<1, 3>(0, 0) = cbf.slope.transpose();
  qp.ineq_vec(0) = cfg.epsilon - cbf.offset;
  qp.ineq_mat.block<1, 3>(1, 0) = -clf.slope.transpose();
  qp.ineq_mat(1, 3) = 1.0;
  qp.ineq_vec(1) = clf.offset;
  const double inf = std::numeric_limits<double>::infinity();
  qp.lower.resize(4);
  qp.upper.resize(4);
  qp.lower << -cfg.u_bound, -cfg.u_bound, -cfg.u_bound, -inf;
  qp.upper << cfg.u_bound, cfg.u_bound, cfg.u_bound, inf;

  // Start from the nominal input with its smallest admissible slack: if the nominal input already
  // satisfies the barrier row this point is feasible, and optimal when it is also unconstrained.
  QpWarmStart ws;
  Eigen::Vector4d z0;
  z0.head<3>() = u0;
  z0(3) = std::max(0.0, clf.at(u0));
  ws.z = z0;

  QpSolution sol;
  bool solved = false;
  bool used_hold_row = false;
  if (hold_row) {
    QpProblem qp_hold = qp;
    qp_hold.ineq_mat.conservativeResize(3, 4);
    qp_hold.ineq_vec.conservativeResize(3);
    qp_hold.ineq_mat.row(2).setZero();
    qp_hold.ineq_mat.block<1, 3>(2, 0) = hold_row->slope.transpose();
    qp_hold.ineq_vec(2) = -hold_row->offset;
    if (warm_active) ws.active_set = *warm_active;
    sol = solve_qp(qp_hold, ws);
    // Nearly parallel barrier and next-sample rows can also stall the solver; either way the
    // problem is solved again without the extra row.
    solved = sol.status == QpStatus::Optimal;
    used_hold_row = solved;
  }
  if (!solved) {
    ws.active_set = warm_active ? to_two_row_layout(*warm_active) : std::vector<int>{};
    sol = solve_qp(qp, ws);
    sol.active_set = from_two_row_layout(sol.active_set);
  }

  FilterResult out;
  out.status = sol.status;
  out.active_set = sol.active_set;
  out.hold_row = used_hold_row;
  if (sol.status == QpStatus::Optimal) {
    out.u_sf = sol.z.head<3>();
    out.slack = sol.z(3);
  } else if (sol.z.allFinite() && sol.z.head<3>().cwiseAbs().maxCoeff() <= cfg.u_bound &&
             cbf.at(sol.z.head<3>()) >= cfg.epsilon) {
    // Unconverged but safe iterate.
    out.u_sf = sol.z.head<3>();
    out.slack = std::max(sol.z(3), clf.at(out.u_sf));
  } else {
    // Fall back to the input that maximizes the barrier margin; it is admissible by the check
    // above.
    for (int i = 0; i < 3; ++i) {
      out.u_sf(i) = cbf.slope(i) >= 0.0 ? cfg.u_bound : -cfg.u_bound;
    }
    out.slack = std::max(0.0, clf.at(out.u_sf));
  }
  out.intervention = (out.u_sf - u_nn).norm();
  out.cbf_margin_out = cbf.at(out.u_sf);
  out.clf_margin_out = clf.at(out.u_sf);
  out.solve_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return out;
}

FilterResult SafetyFilter::apply(const StateVec& x, const ControlVec& u_nn) {
  FilterResult r = apply_filter(cfg_, x, u_nn, warm_.empty() ? nullptr : &warm_);
  warm_ = r.active_set;
  return r;
}

}  // namespace proxops
