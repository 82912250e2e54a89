#include "proxops/certificates.hpp"

#include <cmath>
#include <numbers>

#include "proxops/dynamics.hpp"

namespace proxops {

namespace {

constexpr double kApexRadius = 1e-6;

// Position/velocity blocks of the CWH drift acceleration a_f = Mp p + Mv v.
Mat3 drift_pos_block(double n) {
  Mat3 m = Mat3::Zero();
  m(0, 0) = 3.0 * n * n;
  m(2, 2) = -n * n;
  return m;
}

Mat3 drift_vel_block(double n) {
  Mat3 m = Mat3::Zero();
  m(0, 1) = 2.0 * n;
  m(1, 0) = -2.0 * n;
  return m;
}

BarrierJet sphere_jet(const SphereBarrier& b, const StateVec& x, double n) {
  const Vec3 e = x.head<3>() - b.center;
  const Vec3 v = x.tail<3>();
  const Vec3 af = cwh_drift_accel(x, n);
  const Mat3 mp = drift_pos_block(n);
  const Mat3 mv = drift_vel_block(n);

  BarrierJet j;
  j.h = e.squaredNorm() - b.radius * b.radius;
  j.dh_dx.head<3>() = 2.0 * e.transpose();
  j.h_dot = 2.0 * e.dot(v);
  j.dh_dot_dx.head<3>() = 2.0 * v.transpose();
  j.dh_dot_dx.tail<3>() = 2.0 * e.transpose();
  j.h_ddot_drift = 2.0 * v.squaredNorm() + 2.0 * e.dot(af);
  j.dh_ddot_drift_dx.head<3>() = (2.0 * af + 2.0 * mp.transpose() * e).transpose();
  j.dh_ddot_drift_dx.tail<3>() = (4.0 * v + 2.0 * mv.transpose() * e).transpose();
  j.lg = 2.0 * e;
  j.dlg_dx.leftCols<3>() = 2.0 * Mat3::Identity();
  return j;
}

BarrierJet cone_jet(const ConeBarrier& b, const StateVec& x, double n) {
  const Vec3 p = x.head<3>();
  const Vec3 v = x.tail<3>();
  const double r = p.norm();
  if (r < kApexRadius) {
    throw Error(ErrorCode::Undefined, "cone barrier evaluated at the apex");
  }
  const Vec3& d = b.axis;
  const double k = b.scale;
  const double s = d.dot(p);
  const double r3 = r * r * r;
  const double r5 = r3 * r * r;
  const double r7 = r5 * r * r;
  const Vec3 af = cwh_drift_accel(x, n);
  const Mat3 mp = drift_pos_block(n);
  const Mat3 mv = drift_vel_block(n);

  const Vec3 g = k * (d / r - s * p / r3);
  const Mat3 hs = k * (-(d * p.transpose() + p * d.transpose()) / r3 -
                       s * Mat3::Identity() / r3 + 3.0 * s * p * p.transpose() / r5);

  // Gradient in p of v' Hess(h) v (third-derivative contraction).
  const double a = d.dot(v);
  const double bp = p.dot(v);
  const double w = v.squaredNorm();
  const Vec3 grad_vhv = k * (-2.0 * a * v / r3 + 6.0 * a * bp * p / r5 - w * d / r3 +
                             3.0 * s * w * p / r5 + 3.0 * bp * bp * d / r5 +
                             6.0 * s * bp * v / r5 - 15.0 * s * bp * bp * p / r7);

  BarrierJet j;
  j.h = k * (s / r - std::cos(b.half_angle));
  j.dh_dx.head<3>() = g.transpose();
  j.h_dot = g.dot(v);
  j.dh_dot_dx.head<3>() = (hs * v).transpose();
  j.dh_dot_dx.tail<3>() = g.transpose();
  j.h_ddot_drift = v.dot(hs * v) + g.dot(af);
  j.dh_ddot_drift_dx.head<3>() = (grad_vhv + hs * af + mp.transpose() * g).transpose();
  j.dh_ddot_drift_dx.tail<3>() = (2.0 * hs * v + mv.transpose() * g).transpose();
  j.lg = g;
  j.dlg_dx.leftCols<3>() = hs;
  return j;
}

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

}  // namespace

void validate(const Barrier& barrier) {
  std::visit(overloaded{
                 [](const SphereBarrier& b) {
                   if (!(b.radius > 0.0) || !(b.gamma > 0.0) || !(b.u_max_scalar > 0.0) ||
                       !b.center.allFinite()) {
                     throw Error(ErrorCode::Config, "sphere barrier needs radius, gamma, u_max > 0");
                   }
                 },
                 [](const ConeBarrier& b) {
                   if (std::abs(b.axis.norm() - 1.0) > 1e-12) {
                     throw Error(ErrorCode::Config, "cone axis must be a unit vector");
                   }
                   if (!(b.half_angle > 0.0) || !(b.half_angle < std::numbers::pi / 2.0)) {
                     throw Error(ErrorCode::Config, "cone half angle must lie in (0, pi/2)");
                   }
                   if (!(b.gamma > 0.0) || !(b.u_max_scalar > 0.0) || !(b.scale > 0.0)) {
                     throw Error(ErrorCode::Config, "cone barrier needs gamma, u_max, scale > 0");
                   }
                 },
             },
             barrier);
}

double barrier_gamma(const Barrier& barrier) {
  return std::visit([](const auto& b) { return b.gamma; }, barrier);
}

double barrier_u_max(const Barrier& barrier) {
  return std::visit([](const auto& b) { return b.u_max_scalar; }, barrier);
}

BarrierJet barrier_jet(const Barrier& barrier, const StateVec& x, double n) {
  return std::visit(overloaded{
                        [&](const SphereBarrier& b) { return sphere_jet(b, x, n); },
                        [&](const ConeBarrier& b) { return cone_jet(b, x, n); },
                    },
                    barrier);
}

double h_value(const Barrier& barrier, const StateVec& x) {
  return std::visit(overloaded{
                        [&](const SphereBarrier& b) {
                          return (x.head<3>() - b.center).squaredNorm() - b.radius * b.radius;
                        },
                        [&](const ConeBarrier& b) {
                          const double r = x.head<3>().norm();
                          if (r < kApexRadius) {
                            throw Error(ErrorCode::Undefined, "cone barrier evaluated at the apex");
                          }
                          return b.scale * (b.axis.dot(x.head<3>()) / r - std::cos(b.half_angle));
                        },
                    },
                    barrier);
}

double h_dot(const Barrier& barrier, const StateVec& x, double n) {
  return barrier_jet(barrier, x, n).h_dot;
}

double h_ddot(const Barrier& barrier, const StateVec& x, const ControlVec& u, double n) {
  const BarrierJet j = barrier_jet(barrier, x, n);
  return j.h_ddot_drift + j.lg.dot(u);
}

double big_h(const Barrier& barrier, const StateVec& x, double n) {
  const BarrierJet j = barrier_jet(barrier, x, n);
  return j.h + std::abs(j.h_dot) * j.h_dot / (2.0 * barrier_u_max(barrier));
}

RowVec6 big_h_gradient(const Barrier& barrier, const StateVec& x, double n) {
  const BarrierJet j = barrier_jet(barrier, x, n);
  return j.dh_dx + std::abs(j.h_dot) * j.dh_dot_dx / barrier_u_max(barrier);
}

AffineInU cbf_margin_affine(const Barrier& barrier, const StateVec& x, double n) {
  const BarrierJet j = barrier_jet(barrier, x, n);
  const double um = barrier_u_max(barrier);
  const double gamma = barrier_gamma(barrier);
  const double abs_hd = std::abs(j.h_dot);
  AffineInU out;
  const double big_h_val = j.h + abs_hd * j.h_dot / (2.0 * um);
  out.offset = j.h_dot + abs_hd * j.h_ddot_drift / um + gamma * big_h_val;
  out.slope = abs_hd * j.lg / um;
  return out;
}

double cbf_margin(const Barrier& barrier, const StateVec& x, const ControlVec& u, double n) {
  return cbf_margin_affine(barrier, x, n).at(u);
}

MarginLinearization cbf_margin_linearized(const Barrier& barrier, const StateVec& x,
                                          const ControlVec& u, double n) {
  const BarrierJet j = barrier_jet(barrier, x, n);
  const double um = barrier_u_max(barrier);
  const double gamma = barrier_gamma(barrier);
  const double abs_hd = std::abs(j.h_dot);
  const double sgn = (j.h_dot > 0.0) ? 1.0 : ((j.h_dot < 0.0) ? -1.0 : 0.0);
  const double hdd = j.h_ddot_drift + j.lg.dot(u);
  const RowVec6 dhdd_dx = j.dh_ddot_drift_dx + u.transpose() * j.dlg_dx;

  MarginLinearization lin;
  const double big_h_val = j.h + abs_hd * j.h_dot / (2.0 * um);
  lin.value = j.h_dot + abs_hd * hdd / um + gamma * big_h_val;
  const RowVec6 d_big_h = j.dh_dx + abs_hd * j.dh_dot_dx / um;
  const RowVec6 d_big_h_dot = j.dh_dot_dx + (sgn * hdd * j.dh_dot_dx + abs_hd * dhdd_dx) / um;
  lin.d_dx = d_big_h_dot + gamma * d_big_h;
  lin.d_du = abs_hd * j.lg / um;
  return lin;
}

MarginLinearization h_linearized(const Barrier& barrier, const StateVec& x) {
  MarginLinearization lin;
  std::visit(overloaded{
                 [&](const SphereBarrier& b) {
                   const Vec3 e = x.head<3>() - b.center;
                   lin.value = e.squaredNorm() - b.radius * b.radius;
                   lin.d_dx.head<3>() = 2.0 * e.transpose();
                 },
                 [&](const ConeBarrier& b) {
                   const BarrierJet j = cone_jet(b, x, 0.0);
                   lin.value = j.h;
                   lin.d_dx = j.dh_dx;
                 },
             },
             barrier);
  return lin;
}

void validate(const ClfSpec& spec) {
  if ((spec.p_mat - spec.p_mat.transpose()).cwiseAbs().maxCoeff() >
      1e-9 * std::max(1.0, spec.p_mat.cwiseAbs().maxCoeff())) {
    throw Error(ErrorCode::Config, "CLF matrix must be symmetric");
  }
  Eigen::LLT<Mat6> llt(spec.p_mat);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::Config, "CLF matrix must be positive definite");
  }
  if (!(spec.zeta_min > 0.0) || !(spec.zeta_min < spec.zeta_max)) {
    throw Error(ErrorCode::Config, "CLF decay bounds must satisfy 0 < zeta_min < zeta_max");
  }
}

double clf_value(const ClfSpec& spec, const StateVec& x) {
  const StateVec e = x - spec.goal;
  return e.dot(spec.p_mat * e);
}

RowVec6 clf_gradient(const ClfSpec& spec, const StateVec& x) {
  const StateVec e = x - spec.goal;
  return 2.0 * (spec.p_mat * e).transpose();
}

double decay_rate(const ClfSpec& spec, const StateVec& x) {
  const double arg = spec.steepness * ((x - spec.goal).norm() - spec.midpoint);
  // 1 / (1 + e^arg) evaluated without overflow on either tail.
  double logistic;
  if (arg >= 0.0) {
    const double t = std::exp(-arg);
    logistic = t / (1.0 + t);
  } else {
    logistic = 1.0 / (1.0 + std::exp(arg));
  }
  return spec.zeta_min + (spec.zeta_max - spec.zeta_min) * logistic;
}

AffineInU clf_margin_affine(const ClfSpec& spec, const StateVec& x, double n) {
  const RowVec6 grad = clf_gradient(spec, x);
  StateVec drift;
  drift.head<3>() = x.tail<3>();
  drift.tail<3>() = cwh_drift_accel(x, n);
  AffineInU out;
  out.offset = grad.dot(drift) + decay_rate(spec, x) * clf_value(spec, x);
  out.slope = grad.tail<3>().transpose();
  return out;
}

double clf_margin(const ClfSpec& spec, const StateVec& x, const ControlVec& u, double n) {
  return clf_margin_affine(spec, x, n).at(u);
}

}  // namespace proxops
