#pragma once

#include "proxops/numerics.hpp"
#include "proxops/random.hpp"
#include "proxops/types.hpp"

namespace proxops {

struct OrbitParams {
  double mu = 3.986004418e14;   // [m^3/s^2]
  double altitude = 4.0e5;      // [m]
  double body_radius = 6.371e6; // [m]
  double n = 0.0;               // mean motion [rad/s]

  /// Circular-orbit mean motion sqrt(mu / (R + alt)^3).
  static OrbitParams circular(double mu, double body_radius, double altitude);
};

/// Continuous Clohessy-Wiltshire-Hill system matrices for mean motion n.
Mat6 cwh_a(double n);
Mat63 cwh_b();

/// State derivative of the CWH equations under commanded acceleration u.
StateVec cwh_derivative(const StateVec& x, const ControlVec& u, double n);

/// Drift part of the relative acceleration (the u = 0 part of the velocity derivative).
Vec3 cwh_drift_accel(const StateVec& x, double n);

DiscreteModel cwh_discrete(double n, double ts);

/// Exact ZOH propagation x+ = A_d x + B_d u.
StateVec step(const StateVec& x, const ControlVec& u, const DiscreteModel& model);

/// Textbook closed-form CWH solution for unforced motion.
StateVec closed_form_transition(const StateVec& x0, double t, double n);

/// step(x, u + w) with w uniform per axis in [-w_max, w_max] drawn from `rng`.
StateVec perturbed_step(const StateVec& x, const ControlVec& u, const DiscreteModel& model,
                        RandomStream& rng, double w_max);

}  // namespace proxops
