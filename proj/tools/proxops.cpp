// Command-line driver: data generation, training, rollouts, ablation and benchmarks.
#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "proxops/dynamics.hpp"
#include "proxops/filter.hpp"
#include "proxops/harness.hpp"
#include "proxops/numerics.hpp"
#include "proxops/simd/kernels.hpp"
#include "proxops/training.hpp"

namespace fs = std::filesystem;
using namespace proxops;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitValidation = 2;
constexpr int kExitBreach = 3;

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::string phase;  // empty = both phases where it makes sense
  std::string policy = "ours";
  bool no_filter = false;
};

ScenarioConfig load_config(const CommonOptions& o) {
  ScenarioConfig cfg = o.config.empty() ? ScenarioConfig{} : load_scenario(o.config);
  if (o.seed) cfg.seed = *o.seed;
  return cfg;
}

std::vector<Phase> phases_of(const CommonOptions& o) {
  if (o.phase.empty()) return {Phase::FlyAround, Phase::FinalApproach};
  return {parse_phase(o.phase)};
}

std::string path_in(const CommonOptions& o, const std::string& name) {
  fs::create_directories(o.out);
  return (fs::path(o.out) / name).string();
}

std::string weights_name(const std::string& kind, Phase p) {
  return kind + "_" + to_string(p) + ".pnn";
}

PolicyAssets load_assets(const CommonOptions& o, bool required_bc, bool required_ours) {
  PolicyAssets assets;
  for (Phase p : {Phase::FlyAround, Phase::FinalApproach}) {
    const int i = static_cast<int>(p);
    const fs::path bc = fs::path(o.out) / weights_name("bc", p);
    const fs::path ours = fs::path(o.out) / weights_name("ours", p);
    if (fs::exists(bc)) assets.bc[i] = load_weights(bc.string());
    else if (required_bc) throw Error(ErrorCode::MissingAsset, "missing " + bc.string());
    if (fs::exists(ours)) assets.ours[i] = load_weights(ours.string());
    else if (required_ours) throw Error(ErrorCode::MissingAsset, "missing " + ours.string());
  }
  return assets;
}

void write_losses(const std::vector<double>& losses, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw Error(ErrorCode::Io, "cannot write '" + path + "'");
  std::fprintf(f, "epoch,loss\n");
  for (std::size_t i = 0; i < losses.size(); ++i) std::fprintf(f, "%zu,%.17g\n", i + 1, losses[i]);
  std::fclose(f);
}

int cmd_gen_data(const CommonOptions& o) {
  const Scenario sc(load_config(o));
  Dataset all;
  for (Phase p : phases_of(o)) {
    RandomStream rng = RandomStream(sc.config().seed).split(static_cast<std::uint64_t>(p));
    GenerationStats stats;
    const Dataset d = generate_expert_dataset(
        sc, p, 1 << 20, rng, sc.config().max_steps,
        static_cast<std::size_t>(sc.config().samples_per_phase), &stats);
    std::printf("%s: %zu samples from %d trajectories (%d starts resampled)\n", to_string(p),
                d.size(), stats.trajectories, stats.resampled_starts);
    all.append(d);
  }
  const std::string path = path_in(o, "expert.dset");
  save_dataset(all, path);
  std::printf("wrote %s\n", path.c_str());
  return kExitOk;
}

int cmd_train_bc(const CommonOptions& o) {
  const Scenario sc(load_config(o));
  const ScenarioConfig& cfg = sc.config();
  const Dataset all = load_dataset(path_in(o, "expert.dset"));
  validate(all, cfg.u_max);
  for (Phase p : phases_of(o)) {
    const Dataset d = all.filter(p);
    RandomStream rng = RandomStream(cfg.seed).split(100 + static_cast<std::uint64_t>(p));
    PolicyNetwork net = make_phase_policy(cfg, d, rng);
    OptimizerState opt = make_optimizer(net, adamw_from(cfg));
    const auto losses = pretrain_bc(net, opt, d, TrainOptions{cfg.bc_epochs, cfg.batch_size}, rng);
    save_weights(net, path_in(o, weights_name("bc", p)));
    write_losses(losses, path_in(o, std::string("bc_") + to_string(p) + "_loss.csv"));
    std::printf("%s: %zu samples, loss %.4g -> %.4g\n", to_string(p), d.size(),
                losses.empty() ? 0.0 : losses.front(), losses.empty() ? 0.0 : losses.back());
  }
  return kExitOk;
}

int cmd_train_dagger(const CommonOptions& o, bool imitation_only) {
  const Scenario sc(load_config(o));
  const ScenarioConfig& cfg = sc.config();
  const Dataset all = load_dataset(path_in(o, "expert.dset"));
  validate(all, cfg.u_max);
  const PolicyAssets bc = load_assets(o, true, false);
  for (Phase p : phases_of(o)) {
    PolicyNetwork net = bc.network(PolicyKind::Bc, p);
    OptimizerState opt = make_optimizer(net, adamw_from(cfg));
    DaggerSchedule schedule;
    schedule.n_iter = cfg.dagger_iters;
    schedule.n_rollout = cfg.dagger_rollouts;
    schedule.n_epochs = cfg.dagger_epochs;
    schedule.max_steps = cfg.dagger_max_steps;
    LossWeights w{cfg.lambda_imit, imitation_only ? 0.0 : cfg.lambda_cbf,
                  imitation_only ? 0.0 : cfg.lambda_clf};
    RandomStream rng = RandomStream(cfg.seed).split(200 + static_cast<std::uint64_t>(p));
    const DaggerResult r =
        dagger_refine(net, opt, all.filter(p), sc, p, schedule, w, cfg.batch_size, rng);
    const std::string stem = imitation_only ? "imit" : "ours";
    save_weights(net, path_in(o, weights_name(stem, p)));
    write_dagger_metrics(r.metrics,
                         path_in(o, "dagger_" + stem + "_" + std::string(to_string(p)) + ".csv"));
    save_dataset(r.aggregate, path_in(o, "aggregate_" + stem + "_" + to_string(p) + ".dset"));
    for (const auto& m : r.metrics) {
      std::printf("%s iter %d kappa %.1f: imit %.4g cbf %.4g clf %.4g min_h %.4g iv %.4g\n",
                  to_string(p), m.iteration, m.kappa, m.loss_imit, m.loss_cbf, m.loss_clf, m.min_h,
                  m.mean_intervention);
    }
  }
  return kExitOk;
}

int cmd_rollout(const CommonOptions& o) {
  const Scenario sc(load_config(o));
  const PolicyKind policy = parse_policy(o.policy);
  const bool network = policy == PolicyKind::Bc || policy == PolicyKind::Ours;
  const PolicyAssets assets =
      load_assets(o, network && policy == PolicyKind::Bc, network && policy == PolicyKind::Ours);
  const bool filter = filtered_by_default(policy) && !o.no_filter;
  if (o.phase.empty()) {
    // Full mission from the configured start.
    const MissionResult m = run_mission(sc, assets, policy, filter, sc.config().seed,
                                        sc.config().start, sc.config().max_steps);
    const std::string stem = std::string("rollout_") + to_string(policy) + "_" +
                             std::to_string(sc.config().seed);
    export_csv(m.fly_around, path_in(o, stem + "_flyaround.csv"));
    export_csv(m.hold, path_in(o, stem + "_hold.csv"));
    export_csv(m.approach, path_in(o, stem + "_approach.csv"));
    std::printf("fly-around %s (%d steps, min h %.4g), approach %s (%d steps, min h %.4g), "
                "delta-v %.4f m/s\n",
                to_string(m.fly_around.status), m.fly_around.steps(), m.min_h_fly_around(),
                to_string(m.approach.status), m.approach.steps(), m.min_h_approach(),
                m.delta_v());
    return kExitOk;
  }
  RolloutOptions ro;
  ro.policy = policy;
  ro.use_filter = filter;
  ro.phase = parse_phase(o.phase);
  ro.max_steps = sc.config().max_steps;
  ro.seed = sc.config().seed;
  const RolloutLog log = rollout(sc, assets, ro);
  const std::string path = path_in(o, std::string("rollout_") + to_string(policy) + "_" +
                                          to_string(ro.phase) + "_" + std::to_string(ro.seed) +
                                          ".csv");
  export_csv(log, path);
  std::printf("%s: %d steps, min h %.4g, terminal error %.4g m, mean intervention %.4g -> %s\n",
              to_string(log.status), log.steps(), log.min_h(),
              log.terminal_position_error(sc.phase(ro.phase).goal), log.mean_intervention(),
              path.c_str());
  return kExitOk;
}

int cmd_ablate(const CommonOptions& o, int n_seeds, bool timing) {
  const Scenario sc(load_config(o));
  const PolicyAssets assets = load_assets(o, true, true);
  AblationOptions ao;
  for (int i = 0; i < n_seeds; ++i) ao.seeds.push_back(sc.config().seed + static_cast<std::uint64_t>(i));
  ao.max_steps = sc.config().max_steps;
  ao.include_timing = timing;
  const AblationReport report = run_ablation(sc, assets, ao);
  const std::string path = path_in(o, "ablation.csv");
  export_report(report, path);
  std::cout << format_report(report);
  for (const AblationRow& r : report.rows) {
    if (r.filtered && r.safety_violations > 0) {
      std::fprintf(stderr, "safety-envelope breach: %s in %s (%d runs with h < 0)\n",
                   to_string(r.policy), to_string(r.phase), r.safety_violations);
      return kExitBreach;
    }
  }
  return kExitOk;
}

int cmd_bench(const CommonOptions& o, int n_steps) {
  const Scenario sc(load_config(o));
  const PolicyAssets assets = load_assets(o, false, true);
  const auto rows = benchmark_runtime(sc, assets, n_steps, sc.config().seed);
  const std::string text = format_timing(rows);
  std::cout << "simd backend: " << simd::to_string(simd::active_backend()) << '\n' << text;
  std::FILE* f = std::fopen(path_in(o, "timing.csv").c_str(), "w");
  if (!f) throw Error(ErrorCode::Io, "cannot write timing.csv");
  std::fputs(text.c_str(), f);
  std::fclose(f);
  return kExitOk;
}

// Quick oracle checks that need no trained assets.
int cmd_selftest(const CommonOptions& o) {
  const Scenario sc(load_config(o));
  const double n = sc.mean_motion();
  int failures = 0;
  auto check = [&](const char* name, bool ok, double value) {
    std::printf("%-44s %s (%.3g)\n", name, ok ? "ok" : "FAILED", value);
    if (!ok) ++failures;
  };

  RandomStream rng(sc.config().seed);
  double zoh_err = 0.0;
  for (int i = 0; i < 100; ++i) {
    StateVec x;
    for (int j = 0; j < 6; ++j) x(j) = rng.uniform(-40.0, 40.0) * (j < 3 ? 1.0 : 0.025);
    zoh_err = std::max(zoh_err, (step(x, ControlVec::Zero(), sc.model()) -
                                 closed_form_transition(x, sc.config().ts, n))
                                    .head<3>()
                                    .cwiseAbs()
                                    .maxCoeff());
  }
  check("ZOH vs closed-form transition [m]", zoh_err <= 1e-9, zoh_err);

  const Mat6 q = sc.config().q_diag.asDiagonal();
  const Mat3 r = sc.config().r_diag.asDiagonal();
  const double res = dare_residual(sc.model().a_d, sc.model().b_d, q, r, sc.riccati());
  check("Riccati residual (relative)", res <= 1e-8, res);

  // Filter: the barrier row holds at every Optimal result; feasible inputs pass unchanged.
  double worst_margin = 1e9;
  double worst_pass = 0.0;
  for (Phase p : {Phase::FlyAround, Phase::FinalApproach}) {
    const PhaseSetup& s = sc.phase(p);
    for (int i = 0; i < 200; ++i) {
      const StateVec x = sc.sample_start(p, rng);
      ControlVec u;
      for (int j = 0; j < 3; ++j) u(j) = rng.uniform(-sc.config().u_max, sc.config().u_max);
      try {
        const FilterResult f = apply_filter(s.filter, x, u);
        if (f.status == QpStatus::Optimal) {
          worst_margin = std::min(worst_margin, f.cbf_margin_out - s.filter.epsilon);
        }
        if (f.intervention == 0.0 || (cbf_margin(s.barrier, x, u, n) >= s.filter.epsilon &&
                                      clf_margin(s.clf, x, u, n) <= 0.0)) {
          worst_pass = std::max(worst_pass, f.intervention);
        }
      } catch (const Error& e) {
        if (e.code() != ErrorCode::HardInfeasible) throw;
      }
    }
  }
  check("filter barrier margin at Optimal (>= -1e-6)", worst_margin >= -1e-6, worst_margin);
  check("filter leaves feasible inputs (<= 1e-8)", worst_pass <= 1e-8, worst_pass);

  // Closed-loop safety of the filtered LQR baseline.
  const PolicyAssets none;
  double min_h = 1e9;
  for (Phase p : {Phase::FlyAround, Phase::FinalApproach}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      RolloutOptions ro;
      ro.policy = PolicyKind::Lqr;
      ro.use_filter = true;
      ro.phase = p;
      ro.seed = sc.config().seed + seed;
      ro.max_steps = sc.config().max_steps;
      min_h = std::min(min_h, rollout(sc, none, ro).min_h());
    }
  }
  const bool safe = min_h >= 0.0;
  check("filtered LQR rollouts keep h >= 0", safe, min_h);
  if (!safe) return kExitBreach;
  return failures ? kExitValidation : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Safety-filtered imitation-learning controller for proximity operations"};
  app.require_subcommand(1);
  CommonOptions o;
  std::uint64_t seed = 0;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "Scenario configuration file")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Seed (overrides the configuration)");
    sub->add_option("--out", o.out, "Output and asset directory");
    sub->add_option("--phase", o.phase, "Phase: flyaround or approach (default: both)")
        ->check(CLI::IsMember({"flyaround", "approach"}));
    sub->add_option("--policy", o.policy, "Policy: nmpc-naive, lqr, nmpc, bc or ours")
        ->check(CLI::IsMember({"nmpc-naive", "lqr", "nmpc", "bc", "ours"}));
    sub->add_flag("--no-filter", o.no_filter, "Disable the safety filter");
  };
  auto* gen = app.add_subcommand("gen-data", "Generate the expert dataset");
  auto* bc = app.add_subcommand("train-bc", "Behavior-cloning pretraining");
  auto* dagger = app.add_subcommand("train-dagger", "DAgger refinement with the CBF-CLF loss");
  bool imitation_only = false;
  dagger->add_flag("--imitation-only", imitation_only,
                   "Train with the imitation loss alone (comparison policy)");
  auto* roll = app.add_subcommand("rollout", "Closed-loop rollout (full mission without --phase)");
  auto* ablate = app.add_subcommand("ablate", "Five-policy ablation over seeds");
  int n_seeds = 50;
  bool no_timing = false;
  ablate->add_option("--seeds", n_seeds, "Number of consecutive seeds")->check(CLI::PositiveNumber);
  ablate->add_flag("--no-timing", no_timing, "Omit timing columns (byte-reproducible report)");
  auto* bench = app.add_subcommand("bench", "Per-step runtime comparison");
  int n_steps = 500;
  bench->add_option("--steps", n_steps, "Number of benchmark states")->check(CLI::PositiveNumber);
  auto* self = app.add_subcommand("selftest", "Run the built-in oracle checks");
  for (auto* sub : {gen, bc, dagger, roll, ablate, bench, self}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }
  for (auto* sub : {gen, bc, dagger, roll, ablate, bench, self}) {
    if (sub->parsed() && sub->count("--seed") > 0) o.seed = seed;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(o);
    if (bc->parsed()) return cmd_train_bc(o);
    if (dagger->parsed()) return cmd_train_dagger(o, imitation_only);
    if (roll->parsed()) return cmd_rollout(o);
    if (ablate->parsed()) return cmd_ablate(o, n_seeds, !no_timing);
    if (bench->parsed()) return cmd_bench(o, n_steps);
    if (self->parsed()) return cmd_selftest(o);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  }
  return kExitUsage;
}
