#include <doctest.h>

#include <cmath>
#include <cstring>
#include <numbers>

#include "oracles.hpp"
#include "proxops/dynamics.hpp"
#include "proxops/scenario.hpp"

using namespace proxops;

namespace {

StateVec random_state(RandomStream& rng, double pos = 40.0, double vel = 0.5) {
  StateVec x;
  for (int i = 0; i < 3; ++i) x(i) = rng.uniform(-pos, pos);
  for (int i = 3; i < 6; ++i) x(i) = rng.uniform(-vel, vel);
  return x;
}

}  // namespace

TEST_CASE("mean motion follows from the orbit parameters") {
  const OrbitParams o = OrbitParams::circular(3.986004418e14, 6.371e6, 4.0e5);
  const double r = 6.371e6 + 4.0e5;
  const double expected = std::sqrt(3.986004418e14 / (r * r * r));
  CHECK(std::abs(o.n - expected) <= 1e-12 * expected);
  // Roughly a 92.4 minute orbit.
  CHECK(2.0 * std::numbers::pi / o.n / 60.0 == doctest::Approx(92.4).epsilon(1e-3));
}

TEST_CASE("CWH derivative examples") {
  CHECK(cwh_derivative(StateVec::Zero(), ControlVec::Zero(), 1e-3).cwiseAbs().maxCoeff() == 0.0);
  CHECK(cwh_derivative(make_state(0, 15, 0, 0, 0, 0), ControlVec::Zero(), 1.13e-3)
            .cwiseAbs()
            .maxCoeff() == 0.0);
  const StateVec d = cwh_derivative(make_state(1, 0, 0, 0, 0, 0), ControlVec::Zero(), 1e-3);
  CHECK(d(3) == doctest::Approx(3e-6).epsilon(1e-12));
  CHECK(d(4) == 0.0);
  CHECK(d(5) == 0.0);
}

TEST_CASE("CWH derivative matches the textbook equations") {
  RandomStream rng(1);
  const double n = 1.13e-3;
  for (int i = 0; i < 50; ++i) {
    const StateVec x = random_state(rng);
    const ControlVec u(rng.uniform(-0.08, 0.08), rng.uniform(-0.08, 0.08),
                       rng.uniform(-0.08, 0.08));
    const StateVec d = cwh_derivative(x, u, n);
    CHECK(d(0) == x(3));
    CHECK(d(1) == x(4));
    CHECK(d(2) == x(5));
    CHECK(std::abs(d(3) - (3 * n * n * x(0) + 2 * n * x(4) + u(0))) <= 1e-15);
    CHECK(std::abs(d(4) - (-2 * n * x(3) + u(1))) <= 1e-15);
    CHECK(std::abs(d(5) - (-n * n * x(2) + u(2))) <= 1e-15);
  }
}

TEST_CASE("every zero-velocity V-bar point is an equilibrium") {
  RandomStream rng(2);
  for (int i = 0; i < 100; ++i) {
    const StateVec x = make_state(0, rng.uniform(-1e3, 1e3), 0, 0, 0, 0);
    CHECK(cwh_derivative(x, ControlVec::Zero(), 1.13e-3).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("step examples") {
  const Scenario sc(ScenarioConfig{});
  CHECK(step(StateVec::Zero(), ControlVec::Zero(), sc.model()).cwiseAbs().maxCoeff() == 0.0);
  const StateVec vbar = make_state(0, 15, 0, 0, 0, 0);
  CHECK((step(vbar, ControlVec::Zero(), sc.model()) - vbar).head<3>().cwiseAbs().maxCoeff() <=
        1e-9);
}

TEST_CASE("ZOH step agrees with the closed-form transition on 100 random states") {
  const Scenario sc(ScenarioConfig{});
  RandomStream rng(3);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const StateVec x = random_state(rng);
    const StateVec a = step(x, ControlVec::Zero(), sc.model());
    const StateVec b = closed_form_transition(x, sc.config().ts, sc.mean_motion());
    worst = std::max(worst, (a - b).head<3>().cwiseAbs().maxCoeff());
    CHECK((a - b).tail<3>().cwiseAbs().maxCoeff() <= 1e-11);
  }
  CHECK(worst <= 1e-9);
}

TEST_CASE("step is linear in (x, u)") {
  const Scenario sc(ScenarioConfig{});
  RandomStream rng(4);
  for (int i = 0; i < 50; ++i) {
    const StateVec x = random_state(rng);
    const ControlVec u(rng.uniform(-0.08, 0.08), rng.uniform(-0.08, 0.08),
                       rng.uniform(-0.08, 0.08));
    const double alpha = rng.uniform(-3.0, 3.0);
    const StateVec lhs = step(alpha * x, alpha * u, sc.model());
    const StateVec rhs = alpha * step(x, u, sc.model());
    CHECK((lhs - rhs).norm() <= 1e-12 * std::max(1.0, rhs.norm()));
  }
}

TEST_CASE("closed-form transition examples") {
  const double n = 1.13e-3;
  const StateVec x0 = make_state(1, -2, 3, 0.1, -0.2, 0.05);
  CHECK((closed_form_transition(x0, 0.0, n) - x0).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK(closed_form_transition(StateVec::Zero(), 123.0, n).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("closed-form transition over one orbit agrees with RK4") {
  const double n = 1.1331559e-3;
  const double period = 2.0 * std::numbers::pi / n;
  // Integrate to the multiple of the RK4 step closest to one period.
  const double dt = 1e-3;
  const double t = std::round(period / dt) * dt;
  const StateVec x0 = make_state(1, 0, 0, 0, 0, 0);
  const StateVec cf = closed_form_transition(x0, t, n);
  const StateVec rk = oracle::rk4_cwh(x0, t, n, dt);
  CHECK((cf - rk).head<3>().cwiseAbs().maxCoeff() <= 1e-6);
  // A pure radial offset drifts along V-bar by -12 pi x1 per orbit.
  CHECK(cf(1) == doctest::Approx(-12.0 * std::numbers::pi).epsilon(1e-3));
}

TEST_CASE("perturbed step") {
  const Scenario sc(ScenarioConfig{});
  const StateVec x = make_state(-3, -30, 2, 0.01, 0, 0);
  const ControlVec u(0.01, -0.02, 0.0);
  RandomStream r0(5);
  CHECK(perturbed_step(x, u, sc.model(), r0, 0.0) == step(x, u, sc.model()));

  RandomStream a(6), b(6);
  const StateVec xa = perturbed_step(x, u, sc.model(), a, 1e-5);
  const StateVec xb = perturbed_step(x, u, sc.model(), b, 1e-5);
  CHECK(std::memcmp(xa.data(), xb.data(), sizeof(double) * 6) == 0);

  // Recover the disturbance through the input matrix and check its bound.
  RandomStream rng(7);
  const Eigen::Matrix3d bv = sc.model().b_d.bottomRows<3>();
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const StateVec xp = perturbed_step(x, u, sc.model(), rng, 1e-5);
    const Vec3 w = bv.colPivHouseholderQr().solve((xp - step(x, u, sc.model())).tail<3>());
    worst = std::max(worst, w.cwiseAbs().maxCoeff());
  }
  CHECK(worst <= 1e-5 * (1.0 + 1e-6));
  CHECK(worst >= 0.9e-5);
}
