#pragma once

#include <optional>
#include <vector>

#include "proxops/certificates.hpp"
#include "proxops/numerics.hpp"
#include "proxops/types.hpp"

namespace proxops {

struct FilterConfig {
  Barrier barrier = SphereBarrier{};
  ClfSpec clf;
  double mean_motion = 0.0;
  double epsilon = 0.01;
  double slack_weight = 0.001;  // p
  double u_bound = 0.082;
  /// Zero-order-hold model of one control period. When set, a next-sample row keeps
  /// H(A x + B u) >= epsilon / gamma. The continuous-time barrier condition alone does not
  /// constrain u when dh/dt = 0, and one held sample of full inward thrust can then leave the
  /// safe set.
  std::optional<DiscreteModel> hold_model;
};

/// Throws Config when an invariant is violated.
void validate(const FilterConfig& cfg);

struct FilterResult {
  ControlVec u_sf = ControlVec::Zero();
  double slack = 0.0;         // delta; negative values are allowed
  double intervention = 0.0;  // ||u_sf - u_nn||
  double cbf_margin_out = 0.0;
  double clf_margin_out = 0.0;
  QpStatus status = QpStatus::MaxIter;
  double solve_time = 0.0;    // [s]
  bool hold_row = false;      // the next-sample row was part of the solved QP
  std::vector<int> active_set;  // rows: 0 barrier, 1 Lyapunov, 2 next-sample, then bounds
};

/// Next-sample row of the filter as an affine margin in u (admissible where value >= 0);
/// empty without a hold model.
std::optional<AffineInU> next_sample_row(const FilterConfig& cfg, const StateVec& x);

/// One-step CBF-CLF-QP over z = (u, delta):
///   min ||u - u_nn||^2 + p delta^2   s.t.  cbf_margin(x, u) >= eps,  clf_margin(x, u) <= delta,
///   |u_i| <= u_bound.
/// Both margins are affine in u, so this is a 4-variable convex QP. Throws HardInfeasible when no
/// boxed input satisfies the CBF row, and Undefined at the cone apex. With a hold model the
/// end-of-interval barrier row is added; it is dropped again if it makes the QP infeasible.
/// `warm_active` is an optional working set from a previous call.
FilterResult apply_filter(const FilterConfig& cfg, const StateVec& x, const ControlVec& u_nn,
                          const std::vector<int>* warm_active = nullptr);

/// Stateful wrapper that carries the previous step's active set.
class SafetyFilter {
 public:
  explicit SafetyFilter(FilterConfig cfg) : cfg_(std::move(cfg)) { validate(cfg_); }

  FilterResult apply(const StateVec& x, const ControlVec& u_nn);
  void reset() { warm_.clear(); }
  const FilterConfig& config() const { return cfg_; }

 private:
  FilterConfig cfg_;
  std::vector<int> warm_;
};

}  // namespace proxops
