#pragma once

#include <variant>

#include "proxops/types.hpp"

namespace proxops {

/// Spherical keep-out zone: h = ||p - center||^2 - radius^2.
struct SphereBarrier {
  Vec3 center = Vec3::Zero();
  double radius = 10.0;        // [m]
  double gamma = 0.5;          // class-K gain [1/s]
  double u_max_scalar = 0.082; // braking authority used by the H transform [m/s^2]
};

/// Conical approach corridor around a unit axis through the origin:
///   h = scale * (p'd / ||p|| - cos(half_angle)).
/// `scale` is a positive normalization; it does not change the safe set.
struct ConeBarrier {
  Vec3 axis = Vec3::UnitY();
  double half_angle = 0.05235987755982988; // 3 deg
  double gamma = 1.0;
  double u_max_scalar = 0.082;
  double scale = 1.0;
};

using Barrier = std::variant<SphereBarrier, ConeBarrier>;

/// Throws Config if a barrier's parameters violate their invariants.
void validate(const Barrier& barrier);

double barrier_gamma(const Barrier& barrier);
double barrier_u_max(const Barrier& barrier);

/// h and its first two time derivatives along the CWH flow, with state gradients.
/// The second derivative is affine in u: h_ddot(x, u) = h_ddot_drift + lg'u.
struct BarrierJet {
  double h = 0.0;
  RowVec6 dh_dx = RowVec6::Zero();
  double h_dot = 0.0;
  RowVec6 dh_dot_dx = RowVec6::Zero();
  double h_ddot_drift = 0.0;
  RowVec6 dh_ddot_drift_dx = RowVec6::Zero();
  Vec3 lg = Vec3::Zero();          // d(h_ddot)/du = grad_p h
  Mat36 dlg_dx = Mat36::Zero();    // d(lg)/dx
};

/// Throws Undefined at the cone apex (||p|| < 1e-6 m).
BarrierJet barrier_jet(const Barrier& barrier, const StateVec& x, double n);

double h_value(const Barrier& barrier, const StateVec& x);
double h_dot(const Barrier& barrier, const StateVec& x, double n);
double h_ddot(const Barrier& barrier, const StateVec& x, const ControlVec& u, double n);

/// H = h + |h_dot| h_dot / (2 u_max)
double big_h(const Barrier& barrier, const StateVec& x, double n);
RowVec6 big_h_gradient(const Barrier& barrier, const StateVec& x, double n);

/// Input-constrained CBF margin  Hdot(x, u) + gamma H(x),
/// Hdot = h_dot + |h_dot| h_ddot(x, u) / u_max.
double cbf_margin(const Barrier& barrier, const StateVec& x, const ControlVec& u, double n);

/// A margin that is affine in u: value(u) = offset + slope'u.
struct AffineInU {
  double offset = 0.0;
  Vec3 slope = Vec3::Zero();
  double at(const ControlVec& u) const { return offset + slope.dot(u); }
};

AffineInU cbf_margin_affine(const Barrier& barrier, const StateVec& x, double n);

/// Value and full (x, u) gradient of the CBF margin, for linearization inside the SQP.
struct MarginLinearization {
  double value = 0.0;
  RowVec6 d_dx = RowVec6::Zero();
  Vec3 d_du = Vec3::Zero();
};

MarginLinearization cbf_margin_linearized(const Barrier& barrier, const StateVec& x,
                                          const ControlVec& u, double n);

/// Value and state gradient of h, for the position-only constraint of the naive expert.
MarginLinearization h_linearized(const Barrier& barrier, const StateVec& x);

/// Quadratic CLF V = (x - goal)' P (x - goal) with a sigmoid state-dependent decay rate.
struct ClfSpec {
  Mat6 p_mat = Mat6::Identity();
  StateVec goal = StateVec::Zero();
  double zeta_min = 0.001;
  double zeta_max = 0.06;
  double steepness = 1.0; // j [1/m]
  double midpoint = 15.0; // c [m]
};

void validate(const ClfSpec& spec);

double clf_value(const ClfSpec& spec, const StateVec& x);
RowVec6 clf_gradient(const ClfSpec& spec, const StateVec& x);

/// zeta(x) = zeta_min + (zeta_max - zeta_min) / (1 + exp(j (||x - goal|| - c)))
double decay_rate(const ClfSpec& spec, const StateVec& x);

/// L_f V + L_g V u + zeta(x) V(x); nonpositive when the decrease condition holds.
double clf_margin(const ClfSpec& spec, const StateVec& x, const ControlVec& u, double n);
AffineInU clf_margin_affine(const ClfSpec& spec, const StateVec& x, double n);

}  // namespace proxops
