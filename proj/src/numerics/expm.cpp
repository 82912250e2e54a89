#include <cmath>

#include "proxops/numerics.hpp"

namespace proxops {

namespace {

constexpr int kPadeOrder = 6;

void require_finite(const Eigen::MatrixXd& m, const char* name) {
  if (!m.allFinite()) {
    throw Error(ErrorCode::InvalidMatrix, std::string(name) + " has non-finite entries");
  }
}

}  // namespace

Eigen::MatrixXd expm(const Eigen::MatrixXd& m) {
  require_finite(m, "expm argument");
  if (m.rows() != m.cols()) {
    throw Error(ErrorCode::InvalidMatrix, "expm argument must be square");
  }
  const Eigen::Index dim = m.rows();
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(dim, dim);

  // Scale so that ||X||_inf <= 1/2, where the (6,6) approximant is accurate to machine precision.
  const double norm = m.cwiseAbs().rowwise().sum().maxCoeff();
  int squarings = 0;
  if (norm > 0.5) {
    squarings = std::max(0, static_cast<int>(std::ceil(std::log2(norm / 0.5))));
  }
  const Eigen::MatrixXd x = m / std::ldexp(1.0, squarings);

  // c_k = c_{k-1} (q - k + 1) / (k (2q - k + 1))
  Eigen::MatrixXd numer = eye;
  Eigen::MatrixXd denom = eye;
  Eigen::MatrixXd power = eye;
  double c = 1.0;
  for (int k = 1; k <= kPadeOrder; ++k) {
    c *= static_cast<double>(kPadeOrder - k + 1) / (k * (2.0 * kPadeOrder - k + 1));
    power = power * x;
    numer += c * power;
    denom += ((k % 2 == 0) ? c : -c) * power;
  }
  Eigen::MatrixXd result = denom.partialPivLu().solve(numer);
  for (int i = 0; i < squarings; ++i) {
    result = result * result;
  }
  return result;
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> zoh_discretize_general(const Eigen::MatrixXd& a_c,
                                                                   const Eigen::MatrixXd& b_c,
                                                                   double ts) {
  require_finite(a_c, "a_c");
  require_finite(b_c, "b_c");
  if (!(ts > 0.0) || !std::isfinite(ts)) {
    throw Error(ErrorCode::InvalidMatrix, "sample time must be positive and finite");
  }
  if (a_c.rows() != a_c.cols() || b_c.rows() != a_c.rows()) {
    throw Error(ErrorCode::InvalidMatrix, "inconsistent a_c/b_c dimensions");
  }
  const Eigen::Index n = a_c.rows();
  const Eigen::Index m = b_c.cols();
  Eigen::MatrixXd aug = Eigen::MatrixXd::Zero(n + m, n + m);
  aug.topLeftCorner(n, n) = a_c * ts;
  aug.topRightCorner(n, m) = b_c * ts;
  const Eigen::MatrixXd e = expm(aug);
  return {e.topLeftCorner(n, n), e.topRightCorner(n, m)};
}

DiscreteModel zoh_discretize(const Mat6& a_c, const Mat63& b_c, double ts) {
  auto [a_d, b_d] = zoh_discretize_general(a_c, b_c, ts);
  DiscreteModel model;
  model.a_d = a_d;
  model.b_d = b_d;
  model.ts = ts;
  return model;
}

}  // namespace proxops
