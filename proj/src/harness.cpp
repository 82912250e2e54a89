#include "proxops/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

#include "proxops/dynamics.hpp"
#include "proxops/filter.hpp"
#include "proxops/nmpc.hpp"

namespace proxops {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

class NmpcPolicy final : public Controller {
 public:
  NmpcPolicy(const OcpConfig& cfg, ConstraintForm form) : expert_(cfg, form) {}
  ControlVec act(const StateVec& x) override { return expert_.control(x); }
  void reset() override { expert_.reset(); }

 private:
  ExpertController expert_;
};

class LqrPolicy final : public Controller {
 public:
  LqrPolicy(Eigen::Matrix<double, 3, 6> k, StateVec goal, double u_max)
      : k_(std::move(k)), goal_(std::move(goal)), u_max_(u_max) {}
  ControlVec act(const StateVec& x) override {
    const ControlVec u = -k_ * (x - goal_);
    return u.cwiseMax(-u_max_).cwiseMin(u_max_);
  }

 private:
  Eigen::Matrix<double, 3, 6> k_;
  StateVec goal_;
  double u_max_;
};

class NetworkPolicy final : public Controller {
 public:
  explicit NetworkPolicy(const PolicyNetwork& net) : net_(net) {}
  ControlVec act(const StateVec& x) override { return forward(net_, x); }

 private:
  const PolicyNetwork& net_;
};

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

const char* to_string(PolicyKind p) {
  switch (p) {
    case PolicyKind::NmpcNaive: return "nmpc-naive";
    case PolicyKind::Lqr: return "lqr";
    case PolicyKind::Nmpc: return "nmpc";
    case PolicyKind::Bc: return "bc";
    case PolicyKind::Ours: return "ours";
  }
  return "?";
}

PolicyKind parse_policy(const std::string& s) {
  for (PolicyKind p : {PolicyKind::NmpcNaive, PolicyKind::Lqr, PolicyKind::Nmpc, PolicyKind::Bc,
                       PolicyKind::Ours}) {
    if (s == to_string(p)) return p;
  }
  throw Error(ErrorCode::Config, "unknown policy '" + s + "'");
}

bool filtered_by_default(PolicyKind p) { return p == PolicyKind::Lqr || p == PolicyKind::Ours; }

const PolicyNetwork& PolicyAssets::network(PolicyKind p, Phase phase) const {
  const auto& slot = (p == PolicyKind::Bc ? bc : ours)[static_cast<int>(phase)];
  if (!slot) {
    throw Error(ErrorCode::MissingAsset, std::string("no ") + to_string(p) + " weights for the " +
                                             to_string(phase) + " phase");
  }
  return *slot;
}

const char* to_string(RolloutStatus s) {
  switch (s) {
    case RolloutStatus::Converged: return "converged";
    case RolloutStatus::MaxSteps: return "max-steps";
    case RolloutStatus::ExpertInfeasible: return "expert-infeasible";
    case RolloutStatus::FilterInfeasible: return "filter-infeasible";
    case RolloutStatus::Undefined: return "undefined";
  }
  return "?";
}

Eigen::Matrix<double, 3, 6> lqr_gain(const Scenario& scenario) {
  const DiscreteModel& m = scenario.model();
  const Mat6& p = scenario.riccati();
  const Mat3 r = scenario.config().r_diag.asDiagonal();
  const Mat3 s = r + m.b_d.transpose() * p * m.b_d;
  return s.ldlt().solve(m.b_d.transpose() * p * m.a_d);
}

std::unique_ptr<Controller> lqr_policy(const Scenario& scenario, Phase phase) {
  return std::make_unique<LqrPolicy>(lqr_gain(scenario), scenario.phase(phase).goal,
                                     scenario.config().u_max);
}

std::unique_ptr<Controller> make_controller(PolicyKind kind, const Scenario& scenario,
                                            Phase phase, const PolicyAssets& assets) {
  const PhaseSetup& setup = scenario.phase(phase);
  switch (kind) {
    case PolicyKind::NmpcNaive:
      return std::make_unique<NmpcPolicy>(setup.ocp, ConstraintForm::PositionOnly);
    case PolicyKind::Lqr: return lqr_policy(scenario, phase);
    case PolicyKind::Nmpc:
      return std::make_unique<NmpcPolicy>(setup.ocp, ConstraintForm::InputConstrainedCbf);
    case PolicyKind::Bc:
    case PolicyKind::Ours: return std::make_unique<NetworkPolicy>(assets.network(kind, phase));
  }
  throw Error(ErrorCode::Config, "unknown policy kind");
}

double RolloutLog::min_h() const {
  double m = std::numeric_limits<double>::infinity();
  for (const LogRow& r : rows) {
    if (!std::isnan(r.h)) m = std::min(m, r.h);
  }
  return m;
}

double RolloutLog::delta_v() const {
  double dv = 0.0;
  for (std::size_t k = 0; k + 1 < rows.size(); ++k) {
    dv += rows[k].u_filtered.norm() * (rows[k + 1].t - rows[k].t);
  }
  return dv;
}

double RolloutLog::terminal_position_error(const StateVec& goal) const {
  if (rows.empty()) return kNaN;
  return (rows.back().x - goal).head<3>().norm();
}

double RolloutLog::terminal_velocity_error(const StateVec& goal) const {
  if (rows.empty()) return kNaN;
  return (rows.back().x - goal).tail<3>().norm();
}

double RolloutLog::mean_intervention() const {
  if (rows.size() < 2) return 0.0;
  double s = 0.0;
  for (std::size_t k = 0; k + 1 < rows.size(); ++k) s += rows[k].intervention;
  return s / static_cast<double>(rows.size() - 1);
}

double RolloutLog::max_intervention() const {
  double m = 0.0;
  for (std::size_t k = 0; k + 1 < rows.size(); ++k) m = std::max(m, rows[k].intervention);
  return m;
}

RolloutLog rollout_with(const Scenario& scenario, Controller& controller,
                        const RolloutOptions& options, RandomStream& disturbance) {
  const PhaseSetup& setup = scenario.phase(options.phase);
  const ScenarioConfig& cfg = scenario.config();
  const double n = scenario.mean_motion();
  if (!options.start) throw Error(ErrorCode::Config, "rollout_with needs a start state");
  if (options.max_steps < 0) throw Error(ErrorCode::Config, "max_steps must be nonnegative");

  RolloutLog log;
  log.policy = options.policy;
  log.filtered = options.use_filter;
  log.phase = options.phase;
  log.seed = options.seed;
  log.status = RolloutStatus::MaxSteps;

  std::optional<SafetyFilter> filter;
  if (options.use_filter) filter.emplace(setup.filter);

  // Fills the state-only fields; returns false where a margin is undefined.
  auto fill_state = [&](LogRow& row, const StateVec& x) {
    row.x = x;
    row.v = clf_value(setup.clf, x);
    try {
      row.h = h_value(setup.barrier, x);
      row.big_h = big_h(setup.barrier, x, n);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::Undefined) throw;
      row.h = kNaN;
      row.big_h = kNaN;
      return false;
    }
    return true;
  };

  StateVec x = *options.start;
  int dwell = 0;
  int k = 0;
  for (; k < options.max_steps; ++k) {
    LogRow row;
    row.t = k * cfg.ts;
    if (!fill_state(row, x)) {
      log.status = RolloutStatus::Undefined;
      break;
    }
    auto t0 = std::chrono::steady_clock::now();
    try {
      row.u_policy = controller.act(x);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::Infeasible) throw;
      ++log.infeasible_events;
      log.status = RolloutStatus::ExpertInfeasible;
      break;
    }
    row.policy_ms = options.record_timing ? ms_since(t0) : 0.0;

    row.u_filtered = row.u_policy;
    if (filter) {
      t0 = std::chrono::steady_clock::now();
      try {
        const FilterResult r = filter->apply(x, row.u_policy);
        row.filter_ms = options.record_timing ? ms_since(t0) : 0.0;
        row.u_filtered = r.u_sf;
        row.delta = r.slack;
        row.intervention = r.intervention;
        row.filter_optimal = r.status == QpStatus::Optimal;
      } catch (const Error& e) {
        if (e.code() == ErrorCode::HardInfeasible) {
          ++log.infeasible_events;
          log.status = RolloutStatus::FilterInfeasible;
        } else if (e.code() == ErrorCode::Undefined) {
          log.status = RolloutStatus::Undefined;
        } else {
          throw;
        }
        break;
      }
    }
    row.cbf_margin = cbf_margin(setup.barrier, x, row.u_filtered, n);
    row.clf_margin = clf_margin(setup.clf, x, row.u_filtered, n);
    log.rows.push_back(row);

    x = perturbed_step(x, row.u_filtered, scenario.model(), disturbance, cfg.w_max);
    dwell = scenario.at_goal(options.phase, x) ? dwell + 1 : 0;
    if (options.stop_at_goal && dwell >= cfg.dwell_steps) {
      log.status = RolloutStatus::Converged;
      ++k;
      break;
    }
  }
  LogRow last;
  last.t = static_cast<double>(log.rows.size()) * cfg.ts;
  fill_state(last, x);
  last.u_policy.setConstant(kNaN);
  last.u_filtered.setConstant(kNaN);
  last.cbf_margin = last.clf_margin = last.delta = last.intervention = kNaN;
  last.policy_ms = last.filter_ms = kNaN;
  log.rows.push_back(last);
  if (log.status == RolloutStatus::MaxSteps && !options.stop_at_goal && dwell >= cfg.dwell_steps) {
    log.status = RolloutStatus::Converged;
  }
  return log;
}

RolloutLog rollout(const Scenario& scenario, const PolicyAssets& assets,
                   const RolloutOptions& options) {
  RandomStream rng(options.seed);
  RolloutOptions opts = options;
  if (!opts.start) opts.start = scenario.sample_start(options.phase, rng);
  std::unique_ptr<Controller> controller =
      make_controller(options.policy, scenario, options.phase, assets);
  return rollout_with(scenario, *controller, opts, rng);
}

bool MissionResult::converged_both() const {
  return fly_around.status == RolloutStatus::Converged &&
         approach.status == RolloutStatus::Converged;
}

double MissionResult::delta_v() const {
  return fly_around.delta_v() + hold.delta_v() + approach.delta_v();
}

double MissionResult::min_h_fly_around() const {
  return std::min(fly_around.min_h(), hold.min_h());
}

double MissionResult::min_h_approach() const { return approach.min_h(); }

MissionResult run_mission(const Scenario& scenario, const PolicyAssets& assets, PolicyKind policy,
                          bool use_filter, std::uint64_t seed, const StateVec& start,
                          int max_steps_per_phase, bool record_timing) {
  RandomStream rng(seed);
  MissionResult m;
  RolloutOptions o;
  o.policy = policy;
  o.use_filter = use_filter;
  o.seed = seed;
  o.record_timing = record_timing;

  o.phase = Phase::FlyAround;
  o.start = start;
  o.max_steps = max_steps_per_phase;
  auto fly = make_controller(policy, scenario, Phase::FlyAround, assets);
  m.fly_around = rollout_with(scenario, *fly, o, rng);
  if (m.fly_around.status != RolloutStatus::Converged) return m;

  // Station keeping at the first decision point with the fly-around configuration.
  o.start = m.fly_around.rows.back().x;
  o.max_steps = scenario.config().hold_steps;
  o.stop_at_goal = false;
  m.hold = rollout_with(scenario, *fly, o, rng);
  if (m.hold.status != RolloutStatus::MaxSteps && m.hold.status != RolloutStatus::Converged) {
    return m;
  }

  o.phase = Phase::FinalApproach;
  o.start = m.hold.rows.back().x;
  o.max_steps = max_steps_per_phase;
  o.stop_at_goal = true;
  auto approach = make_controller(policy, scenario, Phase::FinalApproach, assets);
  m.approach = rollout_with(scenario, *approach, o, rng);
  return m;
}

InterventionSummary intervention_stats(const std::vector<RolloutLog>& logs) {
  if (logs.empty()) throw Error(ErrorCode::EmptyBatch, "no rollout logs");
  InterventionSummary s;
  double mean_sum = 0.0;
  double rate_sum = 0.0;
  for (const RolloutLog& log : logs) {
    const std::size_t steps = log.rows.empty() ? 0 : log.rows.size() - 1;
    double sum = 0.0;
    double mx = 0.0;
    std::size_t active = 0;
    for (std::size_t k = 0; k < steps; ++k) {
      const double iv = log.rows[k].intervention;
      sum += iv;
      mx = std::max(mx, iv);
      if (iv > 1e-9) ++active;
    }
    const double mean = steps ? sum / static_cast<double>(steps) : 0.0;
    const double rate = steps ? static_cast<double>(active) / static_cast<double>(steps) : 0.0;
    s.run_mean.push_back(mean);
    s.run_max.push_back(mx);
    s.run_rate.push_back(rate);
    mean_sum += mean;
    rate_sum += rate;
    s.max = std::max(s.max, mx);
  }
  s.mean = mean_sum / static_cast<double>(logs.size());
  s.rate = rate_sum / static_cast<double>(logs.size());
  return s;
}

AblationReport run_ablation(const Scenario& scenario, const PolicyAssets& assets,
                            const AblationOptions& options) {
  AblationReport report;
  report.include_timing = options.include_timing;
  for (PolicyKind policy : options.policies) {
    for (Phase phase : {Phase::FlyAround, Phase::FinalApproach}) {
      // Resolve network assets up front so a missing file is reported before any work.
      if (policy == PolicyKind::Bc || policy == PolicyKind::Ours) assets.network(policy, phase);
      AblationRow row;
      row.policy = policy;
      row.filtered = filtered_by_default(policy);
      row.phase = phase;
      row.min_h = std::numeric_limits<double>::infinity();
      std::vector<RolloutLog> logs;
      double step_ms_sum = 0.0;
      long step_count = 0;
      for (std::uint64_t seed : options.seeds) {
        RolloutOptions o;
        o.policy = policy;
        o.use_filter = row.filtered;
        o.phase = phase;
        o.max_steps = options.max_steps;
        o.seed = seed;
        o.record_timing = options.include_timing;
        RolloutLog log = rollout(scenario, assets, o);
        ++row.runs;
        if (log.status == RolloutStatus::Converged) ++row.converged;
        row.infeasible_events += log.infeasible_events;
        const double mh = log.min_h();
        if (mh < 0.0) ++row.safety_violations;
        row.min_h = std::min(row.min_h, mh);
        row.mean_terminal_error += log.terminal_position_error(scenario.phase(phase).goal);
        row.mean_delta_v += log.delta_v();
        for (std::size_t k = 0; k + 1 < log.rows.size(); ++k) {
          const double ms = log.rows[k].policy_ms + log.rows[k].filter_ms;
          step_ms_sum += ms;
          ++step_count;
          row.peak_step_ms = std::max(row.peak_step_ms, ms);
        }
        logs.push_back(std::move(log));
      }
      if (row.runs > 0) {
        row.mean_terminal_error /= row.runs;
        row.mean_delta_v /= row.runs;
        const InterventionSummary iv = intervention_stats(logs);
        row.mean_intervention = iv.mean;
        row.max_intervention = iv.max;
      }
      row.mean_step_ms = step_count ? step_ms_sum / static_cast<double>(step_count) : 0.0;
      report.rows.push_back(row);
    }
  }
  return report;
}

std::vector<TimingRow> benchmark_runtime(const Scenario& scenario, const PolicyAssets& assets,
                                         int n_steps, std::uint64_t seed) {
  if (n_steps < 1) throw Error(ErrorCode::Config, "n_steps must be positive");
  const Phase phase = Phase::FlyAround;
  const PhaseSetup& setup = scenario.phase(phase);
  const PolicyNetwork& net = assets.network(PolicyKind::Ours, phase);

  // Representative states: the expert's own closed-loop trajectory from the mission start.
  std::vector<StateVec> states;
  {
    RandomStream rng(seed);
    ExpertController expert(setup.ocp);
    StateVec x = scenario.config().start;
    for (int k = 0; k < n_steps; ++k) {
      states.push_back(x);
      ControlVec u = ControlVec::Zero();
      try {
        u = expert.control(x);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::Infeasible) throw;
        expert.reset();
      }
      x = perturbed_step(x, u, scenario.model(), rng, scenario.config().w_max);
    }
  }

  auto measure = [&](const std::string& name, auto&& step) {
    TimingRow row;
    row.name = name;
    double sum = 0.0;
    for (const StateVec& x : states) {
      const auto t0 = std::chrono::steady_clock::now();
      step(x);
      const double ms = ms_since(t0);
      sum += ms;
      row.peak_ms = std::max(row.peak_ms, ms);
      ++row.samples;
    }
    row.mean_ms = sum / row.samples;
    return row;
  };

  std::vector<TimingRow> rows;
  {
    ExpertController naive(setup.ocp, ConstraintForm::PositionOnly);
    rows.push_back(measure("nmpc-naive", [&](const StateVec& x) {
      try {
        naive.control(x);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::Infeasible) throw;
        naive.reset();
      }
    }));
  }
  {
    auto lqr = lqr_policy(scenario, phase);
    SafetyFilter filter(setup.filter);
    rows.push_back(measure("lqr+filter", [&](const StateVec& x) {
      try {
        filter.apply(x, lqr->act(x));
      } catch (const Error& e) {
        if (e.code() != ErrorCode::HardInfeasible) throw;
      }
    }));
  }
  {
    ExpertController expert(setup.ocp);
    rows.push_back(measure("nmpc", [&](const StateVec& x) {
      try {
        expert.control(x);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::Infeasible) throw;
        expert.reset();
      }
    }));
  }
  rows.push_back(measure("nn", [&](const StateVec& x) { forward(net, x); }));
  {
    SafetyFilter filter(setup.filter);
    rows.push_back(measure("nn+filter", [&](const StateVec& x) {
      try {
        filter.apply(x, forward(net, x));
      } catch (const Error& e) {
        if (e.code() != ErrorCode::HardInfeasible) throw;
      }
    }));
  }
  return rows;
}

const char* const kRolloutCsvHeader =
    "t,x1,x2,x3,v1,v2,v3,up1,up2,up3,uf1,uf2,uf3,h,H,cbf_margin,V,clf_margin,delta,"
    "intervention,policy_ms,filter_ms";

void export_csv(const RolloutLog& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path + "'");
  out << kRolloutCsvHeader << '\n';
  for (const LogRow& r : log.rows) {
    std::string line = fmt17(r.t);
    auto add = [&](double v) {
      line += ',';
      line += fmt17(v);
    };
    for (int i = 0; i < 6; ++i) add(r.x(i));
    for (int i = 0; i < 3; ++i) add(r.u_policy(i));
    for (int i = 0; i < 3; ++i) add(r.u_filtered(i));
    for (double v : {r.h, r.big_h, r.cbf_margin, r.v, r.clf_margin, r.delta, r.intervention,
                     r.policy_ms, r.filter_ms}) {
      add(v);
    }
    out << line << '\n';
  }
  if (!out) throw Error(ErrorCode::Io, "error writing '" + path + "'");
}

std::vector<LogRow> import_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != kRolloutCsvHeader) {
    throw Error(ErrorCode::Io, "'" + path + "' does not have the rollout CSV header");
  }
  std::vector<LogRow> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    std::vector<double> v;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      char* end = nullptr;
      const double d = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str() || *end != '\0') {
        throw Error(ErrorCode::Io, path + ":" + std::to_string(line_no) + ": bad number '" +
                                       cell + "'");
      }
      v.push_back(d);
    }
    if (v.size() != 22) {
      throw Error(ErrorCode::Io, path + ":" + std::to_string(line_no) + ": expected 22 columns");
    }
    LogRow r;
    r.t = v[0];
    for (int i = 0; i < 6; ++i) r.x(i) = v[1 + i];
    for (int i = 0; i < 3; ++i) r.u_policy(i) = v[7 + i];
    for (int i = 0; i < 3; ++i) r.u_filtered(i) = v[10 + i];
    r.h = v[13];
    r.big_h = v[14];
    r.cbf_margin = v[15];
    r.v = v[16];
    r.clf_margin = v[17];
    r.delta = v[18];
    r.intervention = v[19];
    r.policy_ms = v[20];
    r.filter_ms = v[21];
    rows.push_back(r);
  }
  return rows;
}

std::string format_report(const AblationReport& report) {
  std::string out =
      "policy,filtered,phase,runs,converged,infeasible_events,safety_violations,min_h,"
      "mean_terminal_error,mean_delta_v,mean_intervention,max_intervention";
  if (report.include_timing) out += ",mean_step_ms,peak_step_ms";
  out += '\n';
  for (const AblationRow& r : report.rows) {
    out += std::string(to_string(r.policy)) + ',' + (r.filtered ? "1" : "0") + ',' +
           to_string(r.phase) + ',' + std::to_string(r.runs) + ',' +
           std::to_string(r.converged) + ',' + std::to_string(r.infeasible_events) + ',' +
           std::to_string(r.safety_violations) + ',' + fmt17(r.min_h) + ',' +
           fmt17(r.mean_terminal_error) + ',' + fmt17(r.mean_delta_v) + ',' +
           fmt17(r.mean_intervention) + ',' + fmt17(r.max_intervention);
    if (report.include_timing) out += ',' + fmt17(r.mean_step_ms) + ',' + fmt17(r.peak_step_ms);
    out += '\n';
  }
  return out;
}

void export_report(const AblationReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path + "'");
  out << format_report(report);
  if (!out) throw Error(ErrorCode::Io, "error writing '" + path + "'");
}

std::string format_timing(const std::vector<TimingRow>& rows) {
  std::string out = "policy,samples,mean_ms,peak_ms\n";
  char buf[160];
  for (const TimingRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%d,%.6f,%.6f\n", r.name.c_str(), r.samples, r.mean_ms,
                  r.peak_ms);
    out += buf;
  }
  return out;
}

}  // namespace proxops
