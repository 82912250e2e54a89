#include "proxops/dynamics.hpp"

#include <cmath>

namespace proxops {

namespace {

void require_finite_state(const StateVec& x, const ControlVec& u) {
  if (!x.allFinite() || !u.allFinite()) {
    throw Error(ErrorCode::NumericalFailure, "non-finite state or control");
  }
}

}  // namespace

OrbitParams OrbitParams::circular(double mu, double body_radius, double altitude) {
  OrbitParams p;
  p.mu = mu;
  p.body_radius = body_radius;
  p.altitude = altitude;
  const double a = body_radius + altitude;
  p.n = std::sqrt(mu / (a * a * a));
  return p;
}

Mat6 cwh_a(double n) {
  Mat6 a = Mat6::Zero();
  a.topRightCorner<3, 3>() = Mat3::Identity();
  a(3, 0) = 3.0 * n * n;
  a(3, 4) = 2.0 * n;
  a(4, 3) = -2.0 * n;
  a(5, 2) = -n * n;
  return a;
}

Mat63 cwh_b() {
  Mat63 b = Mat63::Zero();
  b.bottomRows<3>() = Mat3::Identity();
  return b;
}

Vec3 cwh_drift_accel(const StateVec& x, double n) {
  return Vec3(3.0 * n * n * x(0) + 2.0 * n * x(4), -2.0 * n * x(3), -n * n * x(2));
}

StateVec cwh_derivative(const StateVec& x, const ControlVec& u, double n) {
  require_finite_state(x, u);
  StateVec dx;
  dx.head<3>() = x.tail<3>();
  dx.tail<3>() = cwh_drift_accel(x, n) + u;
  return dx;
}

DiscreteModel cwh_discrete(double n, double ts) { return zoh_discretize(cwh_a(n), cwh_b(), ts); }

StateVec step(const StateVec& x, const ControlVec& u, const DiscreteModel& model) {
  return model.a_d * x + model.b_d * u;
}

StateVec closed_form_transition(const StateVec& x0, double t, double n) {
  const double s = std::sin(n * t);
  const double c = std::cos(n * t);
  const double px = x0(0), py = x0(1), pz = x0(2);
  const double vx = x0(3), vy = x0(4), vz = x0(5);
  StateVec x;
  x(0) = (4.0 - 3.0 * c) * px + (s / n) * vx + (2.0 / n) * (1.0 - c) * vy;
  x(1) = 6.0 * (s - n * t) * px + py - (2.0 / n) * (1.0 - c) * vx +
         (1.0 / n) * (4.0 * s - 3.0 * n * t) * vy;
  x(2) = c * pz + (s / n) * vz;
  x(3) = 3.0 * n * s * px + c * vx + 2.0 * s * vy;
  x(4) = -6.0 * n * (1.0 - c) * px - 2.0 * s * vx + (4.0 * c - 3.0) * vy;
  x(5) = -n * s * pz + c * vz;
  return x;
}

StateVec perturbed_step(const StateVec& x, const ControlVec& u, const DiscreteModel& model,
                        RandomStream& rng, double w_max) {
  if (w_max <= 0.0) return step(x, u, model);
  ControlVec w;
  for (int i = 0; i < 3; ++i) w(i) = rng.uniform(-w_max, w_max);
  return step(x, u + w, model);
}

}  // namespace proxops
