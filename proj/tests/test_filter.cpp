#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "proxops/filter.hpp"
#include "proxops/harness.hpp"
#include "proxops/scenario.hpp"

using namespace proxops;

namespace {

// A state near the phase's constraint boundary with a random nominal input; about half of these
// need a correction.
StateVec boundary_state(const Scenario& sc, Phase p, RandomStream& rng) {
  if (p == Phase::FlyAround) {
    const Vec3 dir = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)).normalized();
    const Vec3 pos = dir * rng.uniform(10.5, 20.0);
    Vec3 vel(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1));
    vel -= dir * rng.uniform(0.0, 0.15);
    return (StateVec() << pos, vel).finished();
  }
  (void)sc;
  const double range = rng.uniform(3.0, 18.0);
  const double off = std::tan(0.045) * range * rng.uniform(-1.0, 1.0);
  const double off2 = std::tan(0.045) * range * rng.uniform(-1.0, 1.0);
  const Vec3 pos(off, range, off2);
  const Vec3 vel(rng.uniform(-0.02, 0.02), rng.uniform(-0.1, 0.05), rng.uniform(-0.02, 0.02));
  return (StateVec() << pos, vel).finished();
}

ControlVec random_input(RandomStream& rng, double u_max) {
  return ControlVec(rng.uniform(-u_max, u_max), rng.uniform(-u_max, u_max),
                    rng.uniform(-u_max, u_max));
}

}  // namespace

TEST_CASE("an input that already satisfies both conditions passes through") {
  const Scenario sc(ScenarioConfig{});
  const PhaseSetup& ph = sc.phase(Phase::FlyAround);
  const FilterConfig& cfg = ph.filter;
  // At rest on the goal: V = 0 and h = 15^2 - 10^2.
  const StateVec x = ph.goal;
  const ControlVec u = ControlVec::Zero();
  REQUIRE(h_value(cfg.barrier, x) == doctest::Approx(125.0));
  REQUIRE(clf_margin(cfg.clf, x, u, cfg.mean_motion) <= 0.0);
  const FilterResult r = apply_filter(cfg, x, u);
  CHECK(r.status == QpStatus::Optimal);
  CHECK(r.u_sf.cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(r.intervention <= 1e-12);
  CHECK(r.slack == doctest::Approx(0.0));
}

// An input is feasible when it satisfies every row the filter imposes: the barrier and
// Lyapunov conditions (zero slack), the box, and the next-sample row when a hold model is set.
TEST_CASE("feasible inputs are left unchanged on random pairs") {
  const Scenario sc(ScenarioConfig{});
  RandomStream rng(1);
  int tested = 0;
  double worst = 0.0;
  for (int i = 0; i < 4000 && tested < 500; ++i) {
    const Phase p = (i % 2 == 0) ? Phase::FlyAround : Phase::FinalApproach;
    const FilterConfig& cfg = sc.phase(p).filter;
    const StateVec x = (i % 4 < 2) ? sc.sample_start(p, rng) : boundary_state(sc, p, rng);
    const ControlVec u = random_input(rng, cfg.u_bound);
    if (cbf_margin(cfg.barrier, x, u, cfg.mean_motion) < cfg.epsilon) continue;
    if (clf_margin(cfg.clf, x, u, cfg.mean_motion) > 0.0) continue;
    const auto hold = next_sample_row(cfg, x);
    REQUIRE(hold.has_value());
    if (hold->at(u) < 0.0) continue;
    ++tested;
    worst = std::max(worst, (apply_filter(cfg, x, u).u_sf - u).cwiseAbs().maxCoeff());

    FilterConfig plain = cfg;
    plain.hold_model.reset();
    CHECK_FALSE(next_sample_row(plain, x).has_value());
    worst = std::max(worst, (apply_filter(plain, x, u).u_sf - u).cwiseAbs().maxCoeff());
  }
  CHECK(tested >= 200);
  CHECK(worst <= 1e-8);
}

TEST_CASE("filter output matches the grid-search oracle") {
  const Scenario sc(ScenarioConfig{});
  RandomStream rng(2);
  int instances = 0;
  int corrected = 0;
  double worst = 0.0;
  while (instances < 40) {
    const Phase p = (instances % 2 == 0) ? Phase::FlyAround : Phase::FinalApproach;
    FilterConfig cfg = sc.phase(p).filter;
    cfg.hold_model.reset();
    const StateVec x = boundary_state(sc, p, rng);
    const ControlVec u_nn = random_input(rng, cfg.u_bound);
    FilterResult r;
    try {
      r = apply_filter(cfg, x, u_nn);
    } catch (const Error& e) {
      REQUIRE(e.code() == ErrorCode::HardInfeasible);
      continue;
    }
    ++instances;
    REQUIRE(r.status == QpStatus::Optimal);
    corrected += r.intervention > 1e-9 ? 1 : 0;
    const ControlVec g = oracle::filter_grid_oracle(cfg, x, u_nn);
    worst = std::max(worst, (r.u_sf - g).cwiseAbs().maxCoeff());
    // The reported slack is the smallest admissible one for the returned input.
    CHECK(r.slack >= r.clf_margin_out - 1e-9);
    CHECK(r.cbf_margin_out >= cfg.epsilon - 1e-9);
  }
  MESSAGE("worst deviation from the grid oracle: " << worst);
  CHECK(corrected >= 5);
  CHECK(worst <= 2e-3);
}

TEST_CASE("returned margins agree with direct evaluation") {
  const Scenario sc(ScenarioConfig{});
  RandomStream rng(3);
  for (int i = 0; i < 200; ++i) {
    const Phase p = (i % 2 == 0) ? Phase::FlyAround : Phase::FinalApproach;
    const FilterConfig& cfg = sc.phase(p).filter;
    const StateVec x = boundary_state(sc, p, rng);
    const ControlVec u_nn = random_input(rng, cfg.u_bound);
    FilterResult r;
    try {
      r = apply_filter(cfg, x, u_nn);
    } catch (const Error&) {
      continue;
    }
    CHECK(r.u_sf.cwiseAbs().maxCoeff() <= cfg.u_bound + 1e-12);
    CHECK(std::abs(r.cbf_margin_out - cbf_margin(cfg.barrier, x, r.u_sf, cfg.mean_motion)) <=
          1e-9 * std::max(1.0, std::abs(r.cbf_margin_out)));
    CHECK(std::abs(r.clf_margin_out - clf_margin(cfg.clf, x, r.u_sf, cfg.mean_motion)) <=
          1e-9 * std::max(1.0, std::abs(r.clf_margin_out)));
    CHECK(r.intervention == doctest::Approx((r.u_sf - u_nn).norm()));
    if (r.status == QpStatus::Optimal) CHECK(r.cbf_margin_out >= cfg.epsilon - 1e-6);
  }
}

TEST_CASE("no admissible input raises HardInfeasible") {
  const Scenario sc(ScenarioConfig{});
  const FilterConfig& cfg = sc.phase(Phase::FlyAround).filter;
  // Just outside the sphere and rushing inward: no input can brake in time.
  const StateVec x = make_state(0, 10.5, 0, 0, -1.0, 0);
  CHECK_THROWS_WITH_AS(apply_filter(cfg, x, ControlVec::Zero()),
                       doctest::Contains("HardInfeasible"), Error);
  const FilterConfig& cone = sc.phase(Phase::FinalApproach).filter;
  try {
    apply_filter(cone, StateVec::Zero(), ControlVec::Zero());
    FAIL("expected Undefined at the cone apex");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Undefined);
  }
  StateVec bad = make_state(0, 20, 0, 0, 0, 0);
  bad(3) = std::nan("");
  CHECK_THROWS_AS(apply_filter(cfg, bad, ControlVec::Zero()), Error);
}

TEST_CASE("filter configuration is validated") {
  const Scenario sc(ScenarioConfig{});
  FilterConfig cfg = sc.phase(Phase::FlyAround).filter;
  cfg.slack_weight = 0.0;
  CHECK_THROWS_AS(SafetyFilter{cfg}, Error);
  cfg = sc.phase(Phase::FlyAround).filter;
  cfg.u_bound = -1.0;
  CHECK_THROWS_AS(validate(cfg), Error);
}

TEST_CASE("stateful filter warm start gives the same inputs as cold solves") {
  const Scenario sc(ScenarioConfig{});
  const FilterConfig& cfg = sc.phase(Phase::FlyAround).filter;
  SafetyFilter f(cfg);
  RandomStream rng(4);
  StateVec x = make_state(0, -25, 0, 0, 0.15, 0);
  for (int k = 0; k < 200; ++k) {
    const ControlVec u_nn(0.0, 0.02, 0.0);
    const FilterResult warm = f.apply(x, u_nn);
    const FilterResult cold = apply_filter(cfg, x, u_nn);
    CHECK((warm.u_sf - cold.u_sf).cwiseAbs().maxCoeff() <= 1e-9);
    x = perturbed_step(x, warm.u_sf, sc.model(), rng, 0.0);
    CHECK(h_value(cfg.barrier, x) >= 0.0);
  }
}

TEST_CASE("intervention statistics examples") {
  RolloutLog a;
  a.rows.resize(4);
  a.rows[0].intervention = 0.0;
  a.rows[1].intervention = 0.02;
  a.rows[2].intervention = 0.04;
  a.rows[3].intervention = std::nan("");  // terminal row
  RolloutLog b;
  b.rows.resize(3);
  b.rows[0].intervention = 0.01;
  b.rows[1].intervention = 0.0;
  b.rows[2].intervention = std::nan("");
  const InterventionSummary s = intervention_stats({a, b});
  REQUIRE(s.run_mean.size() == 2);
  CHECK(s.run_mean[0] == doctest::Approx(0.02));
  CHECK(s.run_mean[1] == doctest::Approx(0.005));
  CHECK(s.run_max[0] == doctest::Approx(0.04));
  CHECK(s.run_rate[0] == doctest::Approx(2.0 / 3.0));
  CHECK(s.run_rate[1] == doctest::Approx(0.5));
  CHECK(s.mean == doctest::Approx(0.0125));
  CHECK(s.max == doctest::Approx(0.04));
  CHECK(s.rate == doctest::Approx((2.0 / 3.0 + 0.5) / 2.0));
  CHECK_THROWS_AS(intervention_stats({}), Error);
}
