#pragma once

// Independent reference computations shared by the unit and acceptance tests.

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "proxops/dynamics.hpp"
#include "proxops/filter.hpp"
#include "proxops/numerics.hpp"

namespace oracle {

/// Classical fourth-order Runge-Kutta integration of the unforced CWH equations.
inline proxops::StateVec rk4_cwh(proxops::StateVec x, double t, double n, double dt) {
  auto f = [n](const proxops::StateVec& s) {
    proxops::StateVec d;
    d << s(3), s(4), s(5), 3.0 * n * n * s(0) + 2.0 * n * s(4), -2.0 * n * s(3), -n * n * s(2);
    return d;
  };
  const int steps = static_cast<int>(std::llround(t / dt));
  for (int i = 0; i < steps; ++i) {
    const proxops::StateVec k1 = f(x);
    const proxops::StateVec k2 = f(x + 0.5 * dt * k1);
    const proxops::StateVec k3 = f(x + 0.5 * dt * k2);
    const proxops::StateVec k4 = f(x + dt * k3);
    x += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return x;
}

/// Coarse-to-fine grid search for min f(z) over the box [lo, hi] subject to feasible(z).
/// Each level scans (2 * half + 1)^n lattices centred on the incumbent until it stops moving, then
/// shrinks the spacing by `shrink`; it stops once the spacing is below `final_step`.
inline Eigen::VectorXd grid_minimize(const std::function<double(const Eigen::VectorXd&)>& f,
                                     const std::function<bool(const Eigen::VectorXd&)>& feasible,
                                     const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                                     int coarse_points, double final_step, int half = 4,
                                     double shrink = 4.0) {
  const int n = static_cast<int>(lo.size());
  Eigen::VectorXd best = 0.5 * (lo + hi);
  double best_f = std::numeric_limits<double>::infinity();
  auto scan = [&](const Eigen::VectorXd& center, const Eigen::VectorXd& step, int h) {
    const int width = 2 * h + 1;
    long total = 1;
    for (int i = 0; i < n; ++i) total *= width;
    Eigen::VectorXd z(n);
    Eigen::VectorXd incumbent = best;
    for (long idx = 0; idx < total; ++idx) {
      long r = idx;
      bool inside = true;
      for (int i = 0; i < n; ++i) {
        const int k = static_cast<int>(r % width) - h;
        r /= width;
        z(i) = center(i) + k * step(i);
        if (z(i) < lo(i) - 1e-12 || z(i) > hi(i) + 1e-12) inside = false;
      }
      if (!inside || !feasible(z)) continue;
      const double v = f(z);
      if (v < best_f) {
        best_f = v;
        incumbent = z;
      }
    }
    best = incumbent;
  };
  Eigen::VectorXd step = (hi - lo) / (2.0 * coarse_points);
  scan(0.5 * (lo + hi), step, coarse_points);
  // At each spacing, re-centre until the incumbent stops moving: a fixed window cannot follow a
  // slanted active constraint far enough on its own.
  auto settle = [&](const Eigen::VectorXd& s) {
    for (int pass = 0; pass < 500; ++pass) {
      const Eigen::VectorXd before = best;
      scan(best, s, half);
      if (best == before) break;
    }
  };
  settle(step);
  while (step.maxCoeff() > final_step) {
    step /= shrink;
    settle(step);
  }
  return best;
}

/// Exact QP oracle by exhaustive active-set enumeration: for every subset of at most n
/// constraints (rows and bounds) treated as equalities, solve the KKT system and keep the
/// feasible candidate with the lowest objective. Exponential, but fine for n <= 4 and m <= 6.
inline Eigen::VectorXd enumerate_qp(const proxops::QpProblem& p) {
  const int n = p.num_vars();
  const int m = p.num_ineq();
  // All constraints as a'z >= b.
  Eigen::MatrixXd a(m + 2 * n, n);
  Eigen::VectorXd b(m + 2 * n);
  a.topRows(m) = p.ineq_mat;
  b.head(m) = p.ineq_vec;
  a.middleRows(m, n) = Eigen::MatrixXd::Identity(n, n);
  b.segment(m, n) = p.lower;
  a.bottomRows(n) = -Eigen::MatrixXd::Identity(n, n);
  b.tail(n) = -p.upper;
  const int total = m + 2 * n;
  Eigen::VectorXd best;
  double best_f = std::numeric_limits<double>::infinity();
  std::vector<int> subset;
  std::function<void(int)> rec = [&](int start) {
    const int k = static_cast<int>(subset.size());
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + k, n + k);
    Eigen::VectorXd rhs(n + k);
    kkt.topLeftCorner(n, n) = p.hess;
    rhs.head(n) = -p.grad;
    for (int i = 0; i < k; ++i) {
      kkt.block(0, n + i, n, 1) = -a.row(subset[i]).transpose();
      kkt.block(n + i, 0, 1, n) = a.row(subset[i]);
      rhs(n + i) = b(subset[i]);
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
    if (lu.isInvertible()) {
      const Eigen::VectorXd sol = lu.solve(rhs);
      const Eigen::VectorXd z = sol.head(n);
      if ((a * z - b).minCoeff() >= -1e-9) {
        const double f = 0.5 * z.dot(p.hess * z) + p.grad.dot(z);
        if (f < best_f) {
          best_f = f;
          best = z;
        }
      }
    }
    if (k == n) return;
    for (int c = start; c < total; ++c) {
      if (!std::isfinite(b(c))) continue;
      subset.push_back(c);
      rec(c + 1);
      subset.pop_back();
    }
  };
  rec(0);
  return best;
}

/// Grid-search reference for the safety-filter QP without the next-sample row. For fixed u the
/// optimal slack is max(0, clf_margin(u)); the search runs over u only. The slack penalty makes
/// the objective a narrow valley across the Lyapunov gradient, and the optimum often lies on the
/// barrier plane or on the line where the two meet; a coordinate lattice follows none of these.
/// The lattice is therefore laid out in orthonormal bases built from the Lyapunov and barrier
/// gradients (measured by differencing the margins, which are affine in u): one basis per ordered
/// pair of candidate active normals (the two margins and the box faces), so that the active
/// constraints of one of them are axis-aligned. The best feasible result is returned.
inline proxops::ControlVec filter_grid_oracle(const proxops::FilterConfig& cfg,
                                              const proxops::StateVec& x,
                                              const proxops::ControlVec& u_nn,
                                              double final_step = 2e-6) {
  using proxops::ControlVec;
  const double n = cfg.mean_motion;
  auto gradient = [&](auto margin) {
    const double m0 = margin(ControlVec::Zero().eval());
    Eigen::Vector3d g;
    for (int i = 0; i < 3; ++i) g(i) = margin(ControlVec::Unit(i).eval()) - m0;
    return g;
  };
  const Eigen::Vector3d clf_dir =
      gradient([&](const ControlVec& u) { return proxops::clf_margin(cfg.clf, x, u, n); });
  const Eigen::Vector3d cbf_dir =
      gradient([&](const ControlVec& u) { return proxops::cbf_margin(cfg.barrier, x, u, n); });

  auto objective_u = [&](const ControlVec& u) {
    const double slack = std::max(0.0, proxops::clf_margin(cfg.clf, x, u, n));
    return (u - u_nn).squaredNorm() + cfg.slack_weight * slack * slack;
  };
  auto feasible_u = [&](const ControlVec& u) {
    return u.cwiseAbs().maxCoeff() <= cfg.u_bound &&
           proxops::cbf_margin(cfg.barrier, x, u, n) >= cfg.epsilon;
  };

  auto search = [&](const Eigen::Vector3d& first, const Eigen::Vector3d& second) {
    // Gram-Schmidt on (first, second, e1, e2, e3), dropping near-dependent directions.
    Eigen::Matrix3d basis;
    int cols = 0;
    for (const Eigen::Vector3d& cand :
         {first, second, Eigen::Vector3d(Eigen::Vector3d::UnitX()),
          Eigen::Vector3d(Eigen::Vector3d::UnitY()), Eigen::Vector3d(Eigen::Vector3d::UnitZ())}) {
      if (cols == 3) break;
      if (!(cand.norm() > 0.0)) continue;
      Eigen::Vector3d v = cand.normalized();
      for (int k = 0; k < cols; ++k) v -= basis.col(k).dot(v) * basis.col(k);
      if (v.norm() < 1e-6) continue;
      basis.col(cols++) = v.normalized();
    }
    // The rotated box [-r, r]^3 covers the input box.
    const double r = std::sqrt(3.0) * cfg.u_bound;
    const Eigen::VectorXd w = grid_minimize(
        [&](const Eigen::VectorXd& v) { return objective_u(basis * v); },
        [&](const Eigen::VectorXd& v) { return feasible_u(basis * v); },
        Eigen::VectorXd::Constant(3, -r), Eigen::VectorXd::Constant(3, r), 20, final_step);
    return ControlVec(basis * w);
  };

  // Pairs of candidate active normals: the two margins and each box face.
  std::vector<std::pair<Eigen::Vector3d, Eigen::Vector3d>> pairs{{clf_dir, cbf_dir},
                                                                 {cbf_dir, clf_dir}};
  for (int i = 0; i < 3; ++i) {
    pairs.emplace_back(cbf_dir, Eigen::Vector3d::Unit(i));
    pairs.emplace_back(clf_dir, Eigen::Vector3d::Unit(i));
  }
  ControlVec best = ControlVec::Zero();
  double best_f = std::numeric_limits<double>::infinity();
  for (const auto& [first, second] : pairs) {
    const ControlVec u = search(first, second);
    if (!feasible_u(u)) continue;
    const double f = objective_u(u);
    if (f < best_f) {
      best_f = f;
      best = u;
    }
  }
  return best;
}

}  // namespace oracle
