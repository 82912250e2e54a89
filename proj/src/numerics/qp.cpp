#include <algorithm>
#include <cmath>
#include <limits>

#include "proxops/numerics.hpp"

namespace proxops {

const char* to_string(QpStatus s) {
  switch (s) {
    case QpStatus::Optimal: return "Optimal";
    case QpStatus::Infeasible: return "Infeasible";
    case QpStatus::MaxIter: return "MaxIter";
  }
  return "?";
}

namespace {

// Stacked constraint system A z >= b. Rows are unit-normalized; `origin` maps a row back to
// the caller's indexing (general rows, lower bounds, upper bounds) and `scale` undoes the
// normalization for multiplier reporting.
struct Constraints {
  Eigen::MatrixXd a;
  Eigen::VectorXd b;
  std::vector<int> origin;
  std::vector<double> scale;
  bool inconsistent = false;  // a zero row with positive right-hand side
};

struct ActiveSetResult {
  Eigen::VectorXd z;
  Eigen::VectorXd lambda;  // per stacked row, zero for inactive rows
  std::vector<int> working;
  bool converged = false;
  int iterations = 0;
};


bool independent_of(const Eigen::MatrixXd& y_all, const std::vector<int>& working, int candidate) {
  const Eigen::Index n = y_all.rows();
  if (static_cast<Eigen::Index>(working.size()) >= n) return false;
  Eigen::MatrixXd cols(n, working.size() + 1);
  for (size_t k = 0; k < working.size(); ++k) cols.col(k) = y_all.col(working[k]);
  cols.col(working.size()) = y_all.col(candidate);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(cols);
  qr.setThreshold(1e-10);
  return qr.rank() == static_cast<Eigen::Index>(working.size() + 1);
}

// Primal active-set iteration from a feasible start (Nocedal & Wright, Alg. 16.3), with the
// equality-constrained subproblems solved in range-space form using a Cholesky factor of H.
ActiveSetResult primal_active_set(const Eigen::MatrixXd& h, const Eigen::VectorXd& g,
                                  const Constraints& cons, Eigen::VectorXd z,
                                  std::vector<int> working, int max_iter) {
  const Eigen::Index n = h.rows();
  const Eigen::Index total = cons.a.rows();
  Eigen::LLT<Eigen::MatrixXd> llt(h);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::InvalidMatrix, "QP Hessian is not positive definite");
  }
  const auto lower = llt.matrixL();
  // Y = L^-1 A', one column per stacked constraint.
  Eigen::MatrixXd y_all = cons.a.transpose();
  lower.solveInPlace(y_all);

  ActiveSetResult out;
  std::vector<char> in_working(total, 0);
  {
    std::vector<int> seeded;
    for (int idx : working) {
      if (idx < 0 || idx >= total || in_working[idx]) continue;
      const double slack = cons.a.row(idx).dot(z) - cons.b(idx);
      if (std::abs(slack) > 1e-9) continue;
      if (!independent_of(y_all, seeded, idx)) continue;
      seeded.push_back(idx);
      in_working[idx] = 1;
    }
    working = std::move(seeded);
  }

  Eigen::VectorXd lambda_w;
  bool at_subspace_min = false;
  for (int iter = 0; iter < max_iter; ++iter) {
    out.iterations = iter + 1;
    const Eigen::VectorXd grad = h * z + g;
    Eigen::VectorXd u = grad;
    lower.solveInPlace(u);

    const Eigen::Index w = static_cast<Eigen::Index>(working.size());
    Eigen::MatrixXd yw(n, w);
    for (Eigen::Index k = 0; k < w; ++k) yw.col(k) = y_all.col(working[k]);
    if (w > 0) {
      // Least squares via QR rather than the normal equations: nearly parallel rows would
      // square an already poor conditioning.
      lambda_w = yw.colPivHouseholderQr().solve(u);
    } else {
      lambda_w.resize(0);
    }
    // p = L^-T (Y lambda - u)
    Eigen::VectorXd p = (w > 0 ? Eigen::VectorXd(yw * lambda_w - u) : Eigen::VectorXd(-u));
    lower.transpose().solveInPlace(p);
    // Remove the round-off component along the working rows; with large gradients (the
    // phase-1 penalty) it would otherwise drift the iterate off its active constraints.
    if (w == n) {
      p.setZero();
    } else if (w > 0) {
      Eigen::MatrixXd aw(w, n);
      for (Eigen::Index k = 0; k < w; ++k) aw.row(k) = cons.a.row(working[k]);
      p -= aw.transpose() * aw.transpose().colPivHouseholderQr().solve(p);
    }

    const double p_tol = 1e-13 * (1.0 + z.cwiseAbs().maxCoeff());
    if (at_subspace_min || p.cwiseAbs().maxCoeff() <= p_tol) {
      int leave = -1;
      double most_negative = -1e-12;
      for (Eigen::Index k = 0; k < w; ++k) {
        if (lambda_w(k) < most_negative) {
          most_negative = lambda_w(k);
          leave = static_cast<int>(k);
        }
      }
      if (leave < 0) {
        out.converged = true;
        break;
      }
      in_working[working[leave]] = 0;
      working.erase(working.begin() + leave);
      at_subspace_min = false;
      continue;
    }

    double alpha = 1.0;
    int blocking = -1;
    const Eigen::VectorXd ap = cons.a * p;
    const double p_norm = p.norm();
    for (Eigen::Index i = 0; i < total; ++i) {
      if (in_working[i]) continue;
      if (ap(i) >= -1e-14 * p_norm) continue;
      const double slack = cons.a.row(i).dot(z) - cons.b(i);
      const double ratio = std::max(0.0, slack) / (-ap(i));
      if (ratio < alpha) {
        alpha = ratio;
        blocking = static_cast<int>(i);
      }
    }
    z += alpha * p;
    if (blocking >= 0) {
      working.push_back(blocking);
      in_working[blocking] = 1;
      at_subspace_min = false;
    } else {
      at_subspace_min = true;
    }
  }

  out.z = std::move(z);
  out.lambda = Eigen::VectorXd::Zero(total);
  if (out.converged) {
    for (size_t k = 0; k < working.size(); ++k) out.lambda(working[k]) = lambda_w(k);
  }
  out.working = std::move(working);
  return out;
}

Constraints stack_constraints(const QpProblem& problem) {
  const int n = problem.num_vars();
  const int m = problem.num_ineq();
  Constraints cons;
  std::vector<Eigen::RowVectorXd> rows;
  std::vector<double> rhs;
  for (int i = 0; i < m; ++i) {
    const double norm = problem.ineq_mat.row(i).norm();
    if (norm == 0.0) {
      if (problem.ineq_vec(i) > 0.0) cons.inconsistent = true;
      continue;
    }
    rows.push_back(problem.ineq_mat.row(i) / norm);
    rhs.push_back(problem.ineq_vec(i) / norm);
    cons.origin.push_back(i);
    cons.scale.push_back(1.0 / norm);
  }
  for (int j = 0; j < n; ++j) {
    if (std::isfinite(problem.lower(j))) {
      Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(n);
      r(j) = 1.0;
      rows.push_back(r);
      rhs.push_back(problem.lower(j));
      cons.origin.push_back(m + j);
      cons.scale.push_back(1.0);
    }
  }
  for (int j = 0; j < n; ++j) {
    if (std::isfinite(problem.upper(j))) {
      Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(n);
      r(j) = -1.0;
      rows.push_back(r);
      rhs.push_back(-problem.upper(j));
      cons.origin.push_back(m + n + j);
      cons.scale.push_back(1.0);
    }
  }
  cons.a.resize(static_cast<Eigen::Index>(rows.size()), n);
  cons.b.resize(static_cast<Eigen::Index>(rows.size()));
  for (size_t k = 0; k < rows.size(); ++k) {
    cons.a.row(k) = rows[k];
    cons.b(k) = rhs[k];
  }
  return cons;
}

void validate(const QpProblem& p) {
  const int n = p.num_vars();
  const int m = p.num_ineq();
  if (p.hess.rows() != n || p.hess.cols() != n || p.lower.size() != n || p.upper.size() != n ||
      (m > 0 && p.ineq_mat.cols() != n) || p.ineq_mat.rows() != m) {
    throw Error(ErrorCode::InvalidMatrix, "QP dimensions are inconsistent");
  }
  if (!p.hess.allFinite() || !p.grad.allFinite() || !p.ineq_mat.allFinite() ||
      !p.ineq_vec.allFinite()) {
    throw Error(ErrorCode::InvalidMatrix, "QP data has non-finite entries");
  }
  if ((p.hess - p.hess.transpose()).cwiseAbs().maxCoeff() >
      1e-12 * std::max(1.0, p.hess.cwiseAbs().maxCoeff())) {
    throw Error(ErrorCode::InvalidMatrix, "QP Hessian is not symmetric");
  }
  for (int j = 0; j < n; ++j) {
    if (std::isnan(p.lower(j)) || std::isnan(p.upper(j)) || p.lower(j) > p.upper(j)) {
      throw Error(ErrorCode::InvalidMatrix, "QP bounds violate lower <= upper");
    }
  }
}

}  // namespace

double qp_kkt_residual(const QpProblem& problem, const Eigen::VectorXd& z,
                       const Eigen::VectorXd& ineq_multipliers,
                       const Eigen::VectorXd& bound_multipliers) {
  const int m = problem.num_ineq();
  const Eigen::VectorXd hz_g = problem.hess * z + problem.grad;
  Eigen::VectorXd stat = hz_g - bound_multipliers;
  if (m > 0) stat -= problem.ineq_mat.transpose() * ineq_multipliers;
  const double stat_scale = 1.0 + (problem.hess * z).cwiseAbs().maxCoeff() +
                            problem.grad.cwiseAbs().maxCoeff();
  double res = stat.cwiseAbs().maxCoeff() / stat_scale;

  for (int i = 0; i < m; ++i) {
    const double norm = std::max(problem.ineq_mat.row(i).norm(), 1e-300);
    const double slack = (problem.ineq_mat.row(i).dot(z) - problem.ineq_vec(i)) / norm;
    const double lam = ineq_multipliers(i) * norm;
    res = std::max(res, std::max(0.0, -slack));
    res = std::max(res, std::max(0.0, -lam) / stat_scale);
    res = std::max(res, std::abs(lam * slack) / stat_scale);
  }
  for (int j = 0; j < problem.num_vars(); ++j) {
    const double lam = bound_multipliers(j);
    const double lo_slack = z(j) - problem.lower(j);
    const double hi_slack = problem.upper(j) - z(j);
    res = std::max(res, std::max(0.0, -lo_slack));
    res = std::max(res, std::max(0.0, -hi_slack));
    if (lam > 0.0) res = std::max(res, std::abs(lam * lo_slack) / stat_scale);
    if (lam < 0.0) res = std::max(res, std::abs(lam * hi_slack) / stat_scale);
  }
  return res;
}

QpSolution solve_qp(const QpProblem& problem, const QpWarmStart& warm, const QpOptions& options) {
  validate(problem);
  const int n = problem.num_vars();
  const int m = problem.num_ineq();
  QpSolution sol;
  sol.ineq_multipliers = Eigen::VectorXd::Zero(m);
  sol.bound_multipliers = Eigen::VectorXd::Zero(n);

  Constraints cons = stack_constraints(problem);
  if (cons.inconsistent) {
    sol.status = QpStatus::Infeasible;
    sol.z = Eigen::VectorXd::Zero(n);
    return sol;
  }
  const Eigen::Index total = cons.a.rows();

  // Starting point: warm start (or origin) clipped into the box.
  Eigen::VectorXd z0 = Eigen::VectorXd::Zero(n);
  if (warm.z && warm.z->size() == n && warm.z->allFinite()) z0 = *warm.z;
  for (int j = 0; j < n; ++j) {
    z0(j) = std::clamp(z0(j), problem.lower(j), problem.upper(j));
  }

  std::vector<int> stacked_warm;
  for (int idx : warm.active_set) {
    for (Eigen::Index k = 0; k < total; ++k) {
      if (cons.origin[k] == idx) stacked_warm.push_back(static_cast<int>(k));
    }
  }

  double max_violation = 0.0;
  if (total > 0) max_violation = std::max(0.0, (cons.b - cons.a * z0).maxCoeff());

  int iterations = 0;
  std::vector<int> start_working = stacked_warm;
  if (max_violation > 0.0) {
    // Elastic phase 1 on (z, s):  min 1/2 (||z - z0||^2 + s^2) + M s
    //   s.t. a_i z + s >= b_i (general rows), bounds on z, s >= 0.
    // This is an exact penalty: s = 0 once M exceeds the multipliers of the projection of z0
    // onto the feasible set, so M is escalated until s vanishes or the penalty is very large.
    Constraints c1;
    c1.a = Eigen::MatrixXd::Zero(total + 1, n + 1);
    c1.b.resize(total + 1);
    c1.a.topLeftCorner(total, n) = cons.a;
    for (Eigen::Index k = 0; k < total; ++k) {
      const bool general = cons.origin[k] < m;
      c1.a(k, n) = general ? 1.0 : 0.0;
    }
    c1.b.head(total) = cons.b;
    c1.a(total, n) = 1.0;
    c1.b(total) = 0.0;
    const Eigen::MatrixXd h1 = Eigen::MatrixXd::Identity(n + 1, n + 1);
    ActiveSetResult p1;
    for (double penalty : {1e2, 1e5, 1e8}) {
      Eigen::VectorXd g1(n + 1);
      g1.head(n) = -z0;
      g1(n) = penalty;
      Eigen::VectorXd start(n + 1);
      start.head(n) = z0;
      start(n) = max_violation;
      p1 = primal_active_set(h1, g1, c1, start, {}, options.max_iter);
      iterations += p1.iterations;
      if (!p1.converged || p1.z(n) <= options.feas_tol) break;
    }
    if (!p1.converged) {
      sol.status = QpStatus::MaxIter;
      sol.z = p1.z.head(n);
      sol.iterations = iterations;
      return sol;
    }
    if (p1.z(n) > options.feas_tol) {
      sol.status = QpStatus::Infeasible;
      sol.z = p1.z.head(n);
      sol.iterations = iterations;
      return sol;
    }
    z0 = p1.z.head(n);
    start_working.clear();
    for (int k : p1.working) {
      if (k < total) start_working.push_back(k);
    }
    for (int k : stacked_warm) start_working.push_back(k);
  }

  ActiveSetResult p2 = primal_active_set(problem.hess, problem.grad, cons, z0, start_working,
                                         std::max(1, options.max_iter - iterations));
  iterations += p2.iterations;
  sol.z = p2.z;
  sol.iterations = iterations;
  for (int k : p2.working) sol.active_set.push_back(cons.origin[k]);

  for (Eigen::Index k = 0; k < total; ++k) {
    const double lam = p2.lambda(k);
    if (lam == 0.0) continue;
    const int o = cons.origin[k];
    if (o < m) {
      sol.ineq_multipliers(o) += lam * cons.scale[k];
    } else if (o < m + n) {
      sol.bound_multipliers(o - m) += lam;
    } else {
      sol.bound_multipliers(o - m - n) -= lam;
    }
  }
  sol.kkt_residual = qp_kkt_residual(problem, sol.z, sol.ineq_multipliers, sol.bound_multipliers);
  if (p2.converged && sol.kkt_residual <= 1e-6) {
    sol.status = QpStatus::Optimal;
  } else {
    sol.status = QpStatus::MaxIter;
  }
  return sol;
}

}  // namespace proxops
