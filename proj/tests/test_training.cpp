#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "proxops/training.hpp"

using namespace proxops;

namespace {

ScenarioConfig small_config() {
  ScenarioConfig cfg;
  cfg.hidden_width = 16;
  cfg.hidden_layers = 2;
  cfg.dropout = 0.0;
  return cfg;
}

Dataset random_dataset(RandomStream& rng, int n, Phase phase = Phase::FlyAround) {
  Dataset d;
  for (int i = 0; i < n; ++i) {
    Sample s;
    for (int j = 0; j < 3; ++j) s.x(j) = rng.uniform(-35.0, 35.0);
    for (int j = 3; j < 6; ++j) s.x(j) = rng.uniform(-0.3, 0.3);
    for (int j = 0; j < 3; ++j) s.u(j) = rng.uniform(-0.08, 0.08);
    s.phase = phase;
    d.records.push_back(s);
  }
  return d;
}

// States near the keep-out sphere moving inward, where the barrier loss is active for
// outward-pointing (or zero) inputs.
RowMatrix inbound_states(RandomStream& rng, int n) {
  RowMatrix s(n, 6);
  for (int i = 0; i < n; ++i) {
    const Vec3 dir = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)).normalized();
    const Vec3 p = dir * rng.uniform(10.5, 13.0);
    const Vec3 v = -dir * rng.uniform(0.3, 0.6);
    s.row(i) << p.transpose(), v.transpose();
  }
  return s;
}

RowMatrix random_outputs(RandomStream& rng, int n) {
  RowMatrix u(n, 3);
  for (Eigen::Index i = 0; i < u.size(); ++i) u.data()[i] = rng.uniform(-0.08, 0.08);
  return u;
}

template <class LossFn>
double fd_worst(const RowMatrix& outputs, const LossValue& lv, LossFn fn) {
  const double step = 1e-7;
  double worst = 0.0;
  for (Eigen::Index r = 0; r < outputs.rows(); ++r) {
    for (int j = 0; j < 3; ++j) {
      RowMatrix up = outputs, down = outputs;
      up(r, j) += step;
      down(r, j) -= step;
      const double fd = (fn(up) - fn(down)) / (2.0 * step);
      worst = std::max(worst, std::abs(fd - lv.grad(r, j)) / std::max(1.0, std::abs(fd)));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("dataset round-trips through the binary format") {
  RandomStream rng(1);
  Dataset d = random_dataset(rng, 37);
  d.append(random_dataset(rng, 5, Phase::FinalApproach));
  const auto path = std::filesystem::temp_directory_path() / "proxops_test.dset";
  save_dataset(d, path.string());
  const Dataset back = load_dataset(path.string());
  std::filesystem::remove(path);
  REQUIRE(back.size() == d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    CHECK(std::memcmp(back.records[i].x.data(), d.records[i].x.data(), 6 * sizeof(double)) == 0);
    CHECK(std::memcmp(back.records[i].u.data(), d.records[i].u.data(), 3 * sizeof(double)) == 0);
    CHECK(back.records[i].phase == d.records[i].phase);
  }
  CHECK(d.filter(Phase::FinalApproach).size() == 5);
  CHECK(d.states().rows() == 42);
  CHECK(d.controls().cols() == 3);
}

TEST_CASE("corrupted datasets are rejected") {
  RandomStream rng(2);
  const Dataset d = random_dataset(rng, 10);
  const auto good = serialize_dataset(d);
  for (std::size_t cut : {std::size_t{0}, std::size_t{5}, good.size() / 2, good.size() - 1}) {
    const std::vector<std::uint8_t> bad(good.begin(), good.begin() + static_cast<long>(cut));
    try {
      deserialize_dataset(bad);
      FAIL("expected CorruptDataset");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::CorruptDataset);
    }
  }
  auto flipped = good;
  flipped[good.size() / 2] ^= 0x01;
  CHECK_THROWS_AS(deserialize_dataset(flipped), Error);
  CHECK_THROWS_AS(load_dataset("/nonexistent/none.dset"), Error);
}

TEST_CASE("dataset validation") {
  RandomStream rng(3);
  Dataset d = random_dataset(rng, 4);
  CHECK_NOTHROW(validate(d, 0.082));
  d.records[2].u(1) = 0.09;
  CHECK_THROWS_AS(validate(d, 0.082), Error);
  d.records[2].u(1) = 0.0;
  d.records[1].x(4) = std::nan("");
  CHECK_THROWS_AS(validate(d, 0.082), Error);
}

TEST_CASE("expert data generation") {
  const Scenario sc(ScenarioConfig{});
  RandomStream rng(4);
  CHECK(generate_expert_dataset(sc, Phase::FlyAround, 0, rng, 100).empty());

  for (Phase p : {Phase::FlyAround, Phase::FinalApproach}) {
    RandomStream r(5);
    GenerationStats stats;
    const Dataset d = generate_expert_dataset(sc, p, 3, r, 60, 0, &stats);
    CHECK(stats.trajectories == 3);
    CHECK(d.size() > 0);
    CHECK(d.size() <= 180);
    CHECK_NOTHROW(validate(d, sc.config().u_max));
    for (const Sample& s : d.records) {
      CHECK(s.phase == p);
      CHECK(h_value(sc.phase(p).barrier, s.x) >= 0.0);
    }
    RandomStream r2(5);
    const Dataset again = generate_expert_dataset(sc, p, 3, r2, 60);
    REQUIRE(again.size() == d.size());
    CHECK(std::memcmp(again.states().data(), d.states().data(), sizeof(double) * 6 * d.size()) == 0);
  }

  RandomStream r3(6);
  CHECK(generate_expert_dataset(sc, Phase::FlyAround, 10, r3, 100, 25).size() == 25);
}

TEST_CASE("imitation loss example and gradient") {
  RowMatrix out(2, 3), exp(2, 3);
  out << 0.01, 0.0, 0.0, 0.0, 0.02, -0.01;
  exp << 0.0, 0.0, 0.0, 0.0, 0.0, 0.0;
  const LossValue l = imitation_loss(out, exp);
  CHECK(l.value == doctest::Approx((1e-4 + 4e-4 + 1e-4) / 2.0).epsilon(1e-14));
  CHECK(l.grad(1, 1) == doctest::Approx(2.0 * 0.02 / 2.0).epsilon(1e-14));
  RandomStream rng(7);
  const RowMatrix o = random_outputs(rng, 4), e = random_outputs(rng, 4);
  const LossValue lv = imitation_loss(o, e);
  CHECK(fd_worst(o, lv, [&](const RowMatrix& u) { return imitation_loss(u, e).value; }) <= 1e-5);
  CHECK(imitation_loss(e, e).value == 0.0);
  CHECK_THROWS_AS(imitation_loss(RowMatrix(0, 3), RowMatrix(0, 3)), Error);
}

TEST_CASE("barrier loss matches its definition and central differences") {
  const Scenario sc(ScenarioConfig{});
  const Barrier& bar = sc.phase(Phase::FlyAround).barrier;
  const double n = sc.mean_motion();
  RandomStream rng(8);
  const RowMatrix s = inbound_states(rng, 8);
  const RowMatrix u = random_outputs(rng, 8);
  const LossValue lv = cbf_loss(s, u, bar, n);
  double expected = 0.0;
  int active = 0;
  for (int i = 0; i < 8; ++i) {
    const double m = cbf_margin(bar, s.row(i).transpose(), u.row(i).transpose(), n);
    expected += std::pow(std::max(0.0, -m), 2);
    active += m < 0.0 ? 1 : 0;
  }
  expected /= 8.0;
  REQUIRE(active > 0);
  CHECK(lv.value == doctest::Approx(expected).epsilon(1e-12));
  CHECK(fd_worst(u, lv, [&](const RowMatrix& x) { return cbf_loss(s, x, bar, n).value; }) <=
        1e-5);
}

TEST_CASE("inactive hinges give exactly zero loss and gradient") {
  const Scenario sc(ScenarioConfig{});
  const PhaseSetup& ph = sc.phase(Phase::FlyAround);
  const double n = sc.mean_motion();
  // Far from the sphere and at rest: the barrier condition holds for any small input.
  RowMatrix s(2, 6);
  s << 0, 35, 0, 0, 0, 0, 30, 0, 5, 0, 0, 0;
  RowMatrix u = RowMatrix::Zero(2, 3);
  const LossValue c = cbf_loss(s, u, ph.barrier, n);
  CHECK(c.value == 0.0);
  CHECK(c.grad.cwiseAbs().maxCoeff() == 0.0);
  // At the goal the Lyapunov condition holds with equality.
  RowMatrix g(1, 6);
  g.row(0) = ph.goal.transpose();
  const LossValue v = clf_loss(g, RowMatrix::Zero(1, 3), ph.clf, n);
  CHECK(v.value == 0.0);
  CHECK(v.grad.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("Lyapunov loss matches its definition and central differences") {
  const Scenario sc(ScenarioConfig{});
  const ClfSpec& clf = sc.phase(Phase::FlyAround).clf;
  const double n = sc.mean_motion();
  RandomStream rng(9);
  RowMatrix s(6, 6);
  for (int i = 0; i < 6; ++i) {
    s.row(i) << rng.uniform(-30, 30), rng.uniform(-30, 30), rng.uniform(-5, 5),
        rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2);
  }
  const RowMatrix u = random_outputs(rng, 6);
  const LossValue lv = clf_loss(s, u, clf, n);
  double expected = 0.0;
  for (int i = 0; i < 6; ++i) {
    expected += std::pow(std::max(0.0, clf_margin(clf, s.row(i).transpose(), u.row(i).transpose(), n)), 2);
  }
  expected /= 6.0;
  REQUIRE(expected > 0.0);
  CHECK(lv.value == doctest::Approx(expected).epsilon(1e-12));
  // Relative to the loss scale: the CLF values here are large.
  const double scale = std::max(1.0, lv.grad.cwiseAbs().maxCoeff());
  RowMatrix scaled = u;
  LossValue lvs = lv;
  lvs.grad /= scale;
  CHECK(fd_worst(scaled, lvs, [&](const RowMatrix& x) { return clf_loss(s, x, clf, n).value / scale; }) <= 1e-5);
}

TEST_CASE("total loss is the weighted sum of its terms") {
  const Scenario sc(ScenarioConfig{});
  const PhaseSetup& ph = sc.phase(Phase::FlyAround);
  const double n = sc.mean_motion();
  RandomStream rng(10);
  const RowMatrix s = inbound_states(rng, 5);
  const RowMatrix e = random_outputs(rng, 5);
  const RowMatrix u = random_outputs(rng, 5);
  const LossWeights w{3.0, 0.25, 0.5};
  const TotalLoss t = total_loss(s, e, u, w, ph, n);
  const LossValue li = imitation_loss(u, e);
  const LossValue lc = cbf_loss(s, u, ph.barrier, n);
  const LossValue lv = clf_loss(s, u, ph.clf, n);
  CHECK(t.imit == li.value);
  CHECK(t.cbf == lc.value);
  CHECK(t.clf == lv.value);
  CHECK(t.total == doctest::Approx(3.0 * li.value + 0.25 * lc.value + 0.5 * lv.value).epsilon(1e-14));
  const RowMatrix g = 3.0 * li.grad + 0.25 * lc.grad + 0.5 * lv.grad;
  CHECK((t.grad - g).cwiseAbs().maxCoeff() <= 1e-14 * std::max(1.0, g.cwiseAbs().maxCoeff()));

  // Doubling every weight doubles the loss.
  const TotalLoss t2 = total_loss(s, e, u, LossWeights{6.0, 0.5, 1.0}, ph, n);
  CHECK(t2.total == doctest::Approx(2.0 * t.total).epsilon(1e-14));

  // With zero certificate weights the objective is plain imitation.
  const TotalLoss bc = total_loss(s, e, u, LossWeights{1.0, 0.0, 0.0}, ph, n);
  CHECK(bc.total == li.value);
  CHECK((bc.grad - li.grad).cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(validate(LossWeights{0.0, 1.0, 1.0}), Error);
  CHECK_THROWS_AS(validate(LossWeights{1.0, -1.0, 1.0}), Error);
}

TEST_CASE("curriculum schedule") {
  const DaggerSchedule s;
  const std::vector<double> k = s.kappas();
  REQUIRE(k.size() == 5);
  const double expected[] = {0.8, 0.6, 0.4, 0.2, 0.0};
  for (int i = 0; i < 5; ++i) CHECK(k[i] == doctest::Approx(expected[i]).epsilon(1e-15));
  for (std::size_t i = 1; i < k.size(); ++i) CHECK(k[i] < k[i - 1]);
  DaggerSchedule bad;
  bad.n_iter = 0;
  CHECK_THROWS_AS(validate(bad), Error);
}

TEST_CASE("behavior cloning fits a single sample") {
  const ScenarioConfig cfg = small_config();
  Dataset d;
  Sample s;
  s.x = make_state(-3, -30, 2, 0.01, 0, 0);
  s.u = ControlVec(0.02, -0.03, 0.01);
  d.records.push_back(s);
  RandomStream rng(11);
  PolicyNetwork net = make_phase_policy(cfg, d, rng);
  AdamWConfig ac = adamw_from(cfg);
  ac.lr = 1e-2;
  ac.weight_decay = 0.0;
  OptimizerState opt = make_optimizer(net, ac);
  TrainOptions to;
  to.epochs = 500;
  to.batch_size = 1;
  const auto losses = pretrain_bc(net, opt, d, to, rng);
  REQUIRE(losses.size() == 500);
  CHECK(losses.back() < 1e-3 * losses.front());
  CHECK((forward(net, s.x) - s.u).norm() <= 1e-3);
}

TEST_CASE("training is deterministic and zero epochs change nothing") {
  const ScenarioConfig cfg = small_config();
  RandomStream drng(12);
  const Dataset d = random_dataset(drng, 300);
  auto run = [&](int epochs) {
    RandomStream rng(13);
    PolicyNetwork net = make_phase_policy(cfg, d, rng);
    OptimizerState opt = make_optimizer(net, adamw_from(cfg));
    TrainOptions to;
    to.epochs = epochs;
    to.batch_size = 64;
    pretrain_bc(net, opt, d, to, rng);
    return serialize_weights(net);
  };
  CHECK(run(3) == run(3));
  RandomStream rng(13);
  const PolicyNetwork fresh = make_phase_policy(cfg, d, rng);
  CHECK(run(0) == serialize_weights(fresh));
  CHECK(run(3) != serialize_weights(fresh));
}

TEST_CASE("refinement loop aggregates and doubles the certificate weights") {
  ScenarioConfig cfg = small_config();
  const Scenario sc(cfg);
  RandomStream rng(14);
  const Dataset initial = generate_expert_dataset(sc, Phase::FinalApproach, 2, rng, 30);
  REQUIRE(!initial.empty());
  PolicyNetwork net = make_phase_policy(cfg, initial, rng);
  OptimizerState opt = make_optimizer(net, adamw_from(cfg));
  DaggerSchedule sched;
  sched.n_rollout = 1;
  sched.n_epochs = 1;
  sched.max_steps = 15;
  const LossWeights w0{100.0, 1e-7, 1e-5};
  const DaggerResult res =
      dagger_refine(net, opt, initial, sc, Phase::FinalApproach, sched, w0, 32, rng);

  REQUIRE(res.metrics.size() == 5);
  CHECK(res.final_weights.lambda_imit == w0.lambda_imit);
  CHECK(res.final_weights.lambda_cbf == doctest::Approx(32.0 * w0.lambda_cbf).epsilon(1e-15));
  CHECK(res.final_weights.lambda_clf == doctest::Approx(32.0 * w0.lambda_clf).epsilon(1e-15));
  std::size_t added = 0;
  for (std::size_t i = 0; i < res.metrics.size(); ++i) {
    const auto& m = res.metrics[i];
    CHECK(m.iteration == static_cast<int>(i) + 1);
    CHECK(m.kappa == doctest::Approx(sched.kappa(m.iteration)));
    CHECK(m.lambda_cbf == doctest::Approx(w0.lambda_cbf * std::pow(2.0, i)).epsilon(1e-15));
    CHECK(m.samples_added > 0);
    added += static_cast<std::size_t>(m.samples_added);
  }
  // Append-only: the initial demonstrations are an unchanged prefix of the aggregate.
  REQUIRE(res.aggregate.size() == initial.size() + added);
  for (std::size_t i = 0; i < initial.size(); ++i) {
    CHECK(res.aggregate.records[i].x == initial.records[i].x);
    CHECK(res.aggregate.records[i].u == initial.records[i].u);
  }
  CHECK_NOTHROW(validate(res.aggregate, cfg.u_max));
}
