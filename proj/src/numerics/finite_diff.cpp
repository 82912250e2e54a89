#include "proxops/numerics.hpp"

namespace proxops {

Eigen::MatrixXd finite_diff_jacobian(const VectorFunction& f, const Eigen::VectorXd& x,
                                     double eps) {
  if (!(eps > 0.0)) {
    throw Error(ErrorCode::NumericalFailure, "finite-difference step must be positive");
  }
  const Eigen::Index n = x.size();
  Eigen::MatrixXd jac;
  Eigen::VectorXd probe = x;
  for (Eigen::Index j = 0; j < n; ++j) {
    probe(j) = x(j) + eps;
    const Eigen::VectorXd fp = f(probe);
    probe(j) = x(j) - eps;
    const Eigen::VectorXd fm = f(probe);
    probe(j) = x(j);
    if (!fp.allFinite() || !fm.allFinite()) {
      throw Error(ErrorCode::NumericalFailure, "function is not finite at a probe point");
    }
    if (j == 0) jac.resize(fp.size(), n);
    jac.col(j) = (fp - fm) / (2.0 * eps);
  }
  return jac;
}

}  // namespace proxops
