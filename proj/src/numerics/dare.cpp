#include <cmath>

#include "proxops/numerics.hpp"

namespace proxops {

namespace {

constexpr int kMaxDoublingIter = 200;
constexpr double kDoublingTol = 1e-12;

}  // namespace

Eigen::MatrixXd solve_dare_general(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                   const Eigen::MatrixXd& q, const Eigen::MatrixXd& r) {
  const Eigen::Index n = a.rows();
  if (a.cols() != n || b.rows() != n || q.rows() != n || q.cols() != n ||
      r.rows() != b.cols() || r.cols() != b.cols()) {
    throw Error(ErrorCode::InvalidMatrix, "inconsistent DARE dimensions");
  }
  if (!a.allFinite() || !b.allFinite() || !q.allFinite() || !r.allFinite()) {
    throw Error(ErrorCode::InvalidMatrix, "DARE inputs have non-finite entries");
  }
  Eigen::LLT<Eigen::MatrixXd> r_chol(r);
  if (r_chol.info() != Eigen::Success) {
    throw Error(ErrorCode::InvalidMatrix, "R must be positive definite");
  }

  // Structured doubling (SDA-1):
  //   W = I + G H
  //   A <- A W^-1 A,  G <- G + A W^-1 G A',  H <- H + A' H W^-1 A
  // with A0 = A, G0 = B R^-1 B', H0 = Q; H converges to the stabilizing P.
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd ak = a;
  Eigen::MatrixXd gk = b * r_chol.solve(b.transpose());
  gk = 0.5 * (gk + gk.transpose()).eval();
  Eigen::MatrixXd hk = 0.5 * (q + q.transpose());

  for (int it = 0; it < kMaxDoublingIter; ++it) {
    const Eigen::PartialPivLU<Eigen::MatrixXd> w(eye + gk * hk);
    const Eigen::MatrixXd winv_a = w.solve(ak);
    const Eigen::MatrixXd winv_g = w.solve(gk);

    Eigen::MatrixXd h_next = hk + ak.transpose() * hk * winv_a;
    Eigen::MatrixXd g_next = gk + ak * winv_g * ak.transpose();
    Eigen::MatrixXd a_next = ak * winv_a;
    h_next = 0.5 * (h_next + h_next.transpose()).eval();
    g_next = 0.5 * (g_next + g_next.transpose()).eval();

    if (!h_next.allFinite() || !g_next.allFinite() || !a_next.allFinite()) {
      throw Error(ErrorCode::NoConvergence, "doubling iteration produced non-finite iterates");
    }
    const double delta = (h_next - hk).norm();
    hk = std::move(h_next);
    gk = std::move(g_next);
    ak = std::move(a_next);
    if (delta <= kDoublingTol * hk.norm()) {
      return hk;
    }
  }
  throw Error(ErrorCode::NoConvergence, "doubling iteration did not converge in 200 iterations");
}

Mat6 solve_dare(const DiscreteModel& model, const Mat6& q, const Mat3& r) {
  return solve_dare_general(model.a_d, model.b_d, q, r);
}

double dare_residual(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const Eigen::MatrixXd& q,
                     const Eigen::MatrixXd& r, const Eigen::MatrixXd& p) {
  const Eigen::MatrixXd btpa = b.transpose() * p * a;
  const Eigen::MatrixXd s = r + b.transpose() * p * b;
  const Eigen::MatrixXd res =
      a.transpose() * p * a - p - btpa.transpose() * s.ldlt().solve(btpa) + q;
  return res.norm();
}

}  // namespace proxops
