#include "proxops/scenario.hpp"

#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <vector>

namespace proxops {

const char* to_string(Phase p) {
  return p == Phase::FlyAround ? "flyaround" : "approach";
}

Phase parse_phase(const std::string& s) {
  if (s == "flyaround") return Phase::FlyAround;
  if (s == "approach") return Phase::FinalApproach;
  throw Error(ErrorCode::Config, "unknown phase '" + s + "' (expected flyaround or approach)");
}

namespace {

constexpr double kPi = 3.14159265358979323846;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& text) {
  const std::string t = trim(text);
  if (t.empty()) throw std::invalid_argument("empty value");
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (end != t.c_str() + t.size() || errno == ERANGE || !std::isfinite(v)) {
    throw std::invalid_argument("'" + t + "' is not a finite number");
  }
  return v;
}

long long parse_integer(const std::string& text) {
  const std::string t = trim(text);
  if (t.empty()) throw std::invalid_argument("empty value");
  errno = 0;
  char* end = nullptr;
  const long long v = std::strtoll(t.c_str(), &end, 10);
  if (end != t.c_str() + t.size() || errno == ERANGE) {
    throw std::invalid_argument("'" + t + "' is not an integer");
  }
  return v;
}

std::uint64_t parse_u64(const std::string& text) {
  const std::string t = trim(text);
  if (t.empty() || t[0] == '-') throw std::invalid_argument("'" + t + "' is not an unsigned integer");
  errno = 0;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(t.c_str(), &end, 10);
  if (end != t.c_str() + t.size() || errno == ERANGE) {
    throw std::invalid_argument("'" + t + "' is not an unsigned integer");
  }
  return v;
}

std::vector<double> parse_list(const std::string& text, std::size_t expected) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_double(item));
  if (out.size() != expected) {
    throw std::invalid_argument("expected " + std::to_string(expected) +
                                " comma-separated values, got " + std::to_string(out.size()));
  }
  return out;
}

StateVec parse_state(const std::string& text) {
  const auto v = parse_list(text, 6);
  return make_state(v[0], v[1], v[2], v[3], v[4], v[5]);
}

Vec3 parse_vec3(const std::string& text) {
  const auto v = parse_list(text, 3);
  return Vec3(v[0], v[1], v[2]);
}

int parse_int(const std::string& text) {
  const long long v = parse_integer(text);
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
    throw std::invalid_argument("integer out of range");
  }
  return static_cast<int>(v);
}

using Setter = std::function<void(ScenarioConfig&, const std::string&)>;
using KeyTable = std::map<std::string, std::map<std::string, Setter>>;

template <typename T>
Setter set_double(T ScenarioConfig::*field) {
  return [field](ScenarioConfig& c, const std::string& v) { c.*field = parse_double(v); };
}

Setter set_int(int ScenarioConfig::*field) {
  return [field](ScenarioConfig& c, const std::string& v) { c.*field = parse_int(v); };
}

Setter set_state(StateVec ScenarioConfig::*field) {
  return [field](ScenarioConfig& c, const std::string& v) { c.*field = parse_state(v); };
}

const KeyTable& key_table() {
  static const KeyTable table = [] {
    KeyTable t;
    t["orbit"] = {
        {"mu", set_double(&ScenarioConfig::mu)},
        {"altitude", set_double(&ScenarioConfig::altitude)},
        {"body_radius", set_double(&ScenarioConfig::body_radius)},
    };
    t["geometry"] = {
        {"az_radius", set_double(&ScenarioConfig::az_radius)},
        {"koz_radius", set_double(&ScenarioConfig::koz_radius)},
        {"cone_half_angle_deg", set_double(&ScenarioConfig::cone_half_angle_deg)},
        {"cone_axis",
         [](ScenarioConfig& c, const std::string& v) { c.cone_axis = parse_vec3(v); }},
        {"cone_scale",
         [](ScenarioConfig& c, const std::string& v) {
           if (trim(v) == "auto") {
             c.cone_scale.reset();
           } else {
             c.cone_scale = parse_double(v);
           }
         }},
        {"goal_fly_around", set_state(&ScenarioConfig::goal_fly_around)},
        {"goal_capture", set_state(&ScenarioConfig::goal_capture)},
        {"min_range_report", set_double(&ScenarioConfig::min_range_report)},
    };
    t["control"] = {
        {"u_max", set_double(&ScenarioConfig::u_max)},
        {"u_max_scalar", set_double(&ScenarioConfig::u_max_scalar)},
        {"ts", set_double(&ScenarioConfig::ts)},
        {"horizon", set_int(&ScenarioConfig::horizon)},
        {"q_diag", set_state(&ScenarioConfig::q_diag)},
        {"r_diag", [](ScenarioConfig& c, const std::string& v) { c.r_diag = parse_vec3(v); }},
        {"pos_box", set_double(&ScenarioConfig::pos_box)},
        {"vel_box", set_double(&ScenarioConfig::vel_box)},
        {"terminal_box",
         [](ScenarioConfig& c, const std::string& v) {
           if (trim(v) == "none") {
             c.terminal_box.reset();
           } else {
             c.terminal_box = parse_state(v);
           }
         }},
        {"max_sqp_iter", set_int(&ScenarioConfig::max_sqp_iter)},
    };
    t["certificates"] = {
        {"gamma_sphere", set_double(&ScenarioConfig::gamma_sphere)},
        {"gamma_cone", set_double(&ScenarioConfig::gamma_cone)},
        {"epsilon", set_double(&ScenarioConfig::epsilon)},
        {"slack_weight", set_double(&ScenarioConfig::slack_weight)},
        {"sigmoid_j", set_double(&ScenarioConfig::sigmoid_j)},
        {"sigmoid_c", set_double(&ScenarioConfig::sigmoid_c)},
        {"zeta_min", set_double(&ScenarioConfig::zeta_min)},
        {"zeta_max", set_double(&ScenarioConfig::zeta_max)},
    };
    t["simulation"] = {
        {"w_max", set_double(&ScenarioConfig::w_max)},
        {"seed", [](ScenarioConfig& c, const std::string& v) { c.seed = parse_u64(v); }},
        {"max_steps", set_int(&ScenarioConfig::max_steps)},
        {"hold_steps", set_int(&ScenarioConfig::hold_steps)},
        {"conv_pos_tol", set_double(&ScenarioConfig::conv_pos_tol)},
        {"conv_vel_tol", set_double(&ScenarioConfig::conv_vel_tol)},
        {"dwell_steps", set_int(&ScenarioConfig::dwell_steps)},
        {"start", set_state(&ScenarioConfig::start)},
    };
    t["training"] = {
        {"samples_per_phase", set_int(&ScenarioConfig::samples_per_phase)},
        {"bc_epochs", set_int(&ScenarioConfig::bc_epochs)},
        {"batch_size", set_int(&ScenarioConfig::batch_size)},
        {"dagger_iters", set_int(&ScenarioConfig::dagger_iters)},
        {"dagger_rollouts", set_int(&ScenarioConfig::dagger_rollouts)},
        {"dagger_epochs", set_int(&ScenarioConfig::dagger_epochs)},
        {"dagger_max_steps", set_int(&ScenarioConfig::dagger_max_steps)},
        {"lambda_imit", set_double(&ScenarioConfig::lambda_imit)},
        {"lambda_cbf", set_double(&ScenarioConfig::lambda_cbf)},
        {"lambda_clf", set_double(&ScenarioConfig::lambda_clf)},
        {"learning_rate", set_double(&ScenarioConfig::learning_rate)},
        {"weight_decay", set_double(&ScenarioConfig::weight_decay)},
        {"beta1", set_double(&ScenarioConfig::beta1)},
        {"beta2", set_double(&ScenarioConfig::beta2)},
        {"grad_clip", set_double(&ScenarioConfig::grad_clip)},
        {"dropout", set_double(&ScenarioConfig::dropout)},
        {"hidden_width", set_int(&ScenarioConfig::hidden_width)},
        {"hidden_layers", set_int(&ScenarioConfig::hidden_layers)},
    };
    return t;
  }();
  return table;
}

[[noreturn]] void invalid(const std::string& field, const std::string& why) {
  throw Error(ErrorCode::Config, "invalid value for '" + field + "': " + why);
}

void require_positive(double v, const std::string& field) {
  if (!(v > 0.0) || !std::isfinite(v)) invalid(field, "must be positive");
}

double cone_h_unscaled(const Vec3& axis, double half_angle, const Vec3& p) {
  return p.dot(axis) / p.norm() - std::cos(half_angle);
}

}  // namespace

void validate(const ScenarioConfig& c) {
  require_positive(c.mu, "orbit.mu");
  require_positive(c.altitude, "orbit.altitude");
  require_positive(c.body_radius, "orbit.body_radius");
  require_positive(c.az_radius, "geometry.az_radius");
  require_positive(c.koz_radius, "geometry.koz_radius");
  if (!(c.koz_radius < c.az_radius)) invalid("geometry.koz_radius", "must be below az_radius");
  if (!(c.cone_half_angle_deg > 0.0 && c.cone_half_angle_deg < 90.0)) {
    invalid("geometry.cone_half_angle_deg", "must lie in (0, 90)");
  }
  if (!(c.cone_axis.norm() > 1e-9)) invalid("geometry.cone_axis", "must be nonzero");
  if (c.cone_scale) require_positive(*c.cone_scale, "geometry.cone_scale");
  require_positive(c.min_range_report, "geometry.min_range_report");

  const double fly_range = c.goal_fly_around.head<3>().norm();
  if (!(fly_range > c.koz_radius && fly_range < c.az_radius)) {
    invalid("geometry.goal_fly_around", "must lie outside the KOZ and inside the Approach Zone");
  }
  const Vec3 cap = c.goal_capture.head<3>();
  if (!(cap.norm() < c.koz_radius) || !(cap.norm() > 1e-6)) {
    invalid("geometry.goal_capture", "must lie inside the KOZ and away from the cone apex");
  }
  if (!(cone_h_unscaled(c.cone_axis.normalized(), c.cone_half_angle_deg * kPi / 180.0, cap) > 0.0)) {
    invalid("geometry.goal_capture", "must lie inside the approach corridor");
  }

  require_positive(c.u_max, "control.u_max");
  require_positive(c.u_max_scalar, "control.u_max_scalar");
  require_positive(c.ts, "control.ts");
  if (c.horizon < 1) invalid("control.horizon", "must be at least 1");
  if (!(c.q_diag.array() >= 0.0).all()) invalid("control.q_diag", "must be nonnegative");
  if (!(c.r_diag.array() > 0.0).all()) invalid("control.r_diag", "must be positive");
  require_positive(c.pos_box, "control.pos_box");
  require_positive(c.vel_box, "control.vel_box");
  if (c.terminal_box && !(c.terminal_box->array() > 0.0).all()) {
    invalid("control.terminal_box", "must be positive");
  }
  if (c.max_sqp_iter < 1) invalid("control.max_sqp_iter", "must be at least 1");

  require_positive(c.gamma_sphere, "certificates.gamma_sphere");
  require_positive(c.gamma_cone, "certificates.gamma_cone");
  if (!(c.epsilon >= 0.0)) invalid("certificates.epsilon", "must be nonnegative");
  require_positive(c.slack_weight, "certificates.slack_weight");
  require_positive(c.sigmoid_j, "certificates.sigmoid_j");
  if (!(c.zeta_min > 0.0 && c.zeta_min < c.zeta_max)) {
    invalid("certificates.zeta_min", "must satisfy 0 < zeta_min < zeta_max");
  }

  if (!(c.w_max >= 0.0)) invalid("simulation.w_max", "must be nonnegative");
  if (c.max_steps < 1) invalid("simulation.max_steps", "must be at least 1");
  if (c.hold_steps < 0) invalid("simulation.hold_steps", "must be nonnegative");
  require_positive(c.conv_pos_tol, "simulation.conv_pos_tol");
  require_positive(c.conv_vel_tol, "simulation.conv_vel_tol");
  if (c.dwell_steps < 1) invalid("simulation.dwell_steps", "must be at least 1");

  if (c.samples_per_phase < 0) invalid("training.samples_per_phase", "must be nonnegative");
  if (c.bc_epochs < 0) invalid("training.bc_epochs", "must be nonnegative");
  if (c.batch_size < 1) invalid("training.batch_size", "must be at least 1");
  if (c.dagger_iters < 0) invalid("training.dagger_iters", "must be nonnegative");
  if (c.dagger_rollouts < 0) invalid("training.dagger_rollouts", "must be nonnegative");
  if (c.dagger_epochs < 0) invalid("training.dagger_epochs", "must be nonnegative");
  if (c.dagger_max_steps < 1) invalid("training.dagger_max_steps", "must be at least 1");
  require_positive(c.lambda_imit, "training.lambda_imit");
  if (!(c.lambda_cbf >= 0.0)) invalid("training.lambda_cbf", "must be nonnegative");
  if (!(c.lambda_clf >= 0.0)) invalid("training.lambda_clf", "must be nonnegative");
  require_positive(c.learning_rate, "training.learning_rate");
  if (!(c.weight_decay >= 0.0)) invalid("training.weight_decay", "must be nonnegative");
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0)) invalid("training.beta1", "must lie in [0, 1)");
  if (!(c.beta2 >= 0.0 && c.beta2 < 1.0)) invalid("training.beta2", "must lie in [0, 1)");
  require_positive(c.grad_clip, "training.grad_clip");
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) invalid("training.dropout", "must lie in [0, 1)");
  if (c.hidden_width < 1) invalid("training.hidden_width", "must be at least 1");
  if (c.hidden_layers < 1) invalid("training.hidden_layers", "must be at least 1");
}

ScenarioConfig parse_scenario(const std::string& text, const std::string& source) {
  ScenarioConfig cfg;
  const KeyTable& table = key_table();
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  std::string section;
  std::set<std::string> seen;
  auto fail = [&](const std::string& what) {
    throw Error(ErrorCode::Config, source + ":" + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail("malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (!table.count(section)) fail("unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (section.empty()) fail("key '" + key + "' appears before any section header");
    const auto& keys = table.at(section);
    const auto it = keys.find(key);
    if (it == keys.end()) fail("unknown key '" + key + "' in section [" + section + "]");
    if (!seen.insert(section + "." + key).second) fail("duplicate key '" + key + "'");
    try {
      it->second(cfg, value);
    } catch (const std::invalid_argument& e) {
      fail("bad value for '" + key + "': " + e.what());
    }
  }
  validate(cfg);
  return cfg;
}

ScenarioConfig load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str(), path);
}

Scenario::Scenario(ScenarioConfig cfg) : cfg_(std::move(cfg)) {
  validate(cfg_);
  orbit_ = OrbitParams::circular(cfg_.mu, cfg_.body_radius, cfg_.altitude);
  model_ = cwh_discrete(orbit_.n, cfg_.ts);
  const Mat6 q = cfg_.q_diag.asDiagonal();
  const Mat3 r = cfg_.r_diag.asDiagonal();
  p_mat_ = solve_dare(model_, q, r);

  const double half_angle = cfg_.cone_half_angle_deg * kPi / 180.0;
  SphereBarrier sphere;
  sphere.center = Vec3::Zero();
  sphere.radius = cfg_.koz_radius;
  sphere.gamma = cfg_.gamma_sphere;
  sphere.u_max_scalar = cfg_.u_max_scalar;
  ConeBarrier cone;
  cone.axis = cfg_.cone_axis.normalized();
  cone.half_angle = half_angle;
  cone.gamma = cfg_.gamma_cone;
  cone.u_max_scalar = cfg_.u_max_scalar;
  cone.scale = cfg_.cone_scale ? *cfg_.cone_scale : 1.0 / (1.0 - std::cos(half_angle));

  auto setup = [&](Phase phase, const StateVec& goal, Barrier barrier) {
    PhaseSetup s;
    s.phase = phase;
    s.goal = goal;
    s.barrier = barrier;
    s.clf.p_mat = p_mat_;
    s.clf.goal = goal;
    s.clf.zeta_min = cfg_.zeta_min;
    s.clf.zeta_max = cfg_.zeta_max;
    s.clf.steepness = cfg_.sigmoid_j;
    s.clf.midpoint = cfg_.sigmoid_c;
    validate(s.clf);

    s.ocp.horizon = cfg_.horizon;
    s.ocp.q_mat = q;
    s.ocp.r_mat = r;
    s.ocp.p_mat = p_mat_;
    s.ocp.model = model_;
    s.ocp.mean_motion = orbit_.n;
    s.ocp.barrier = barrier;
    s.ocp.epsilon = cfg_.epsilon;
    s.ocp.u_bound = cfg_.u_max;
    s.ocp.goal = goal;
    s.ocp.pos_box = Vec3::Constant(cfg_.pos_box);
    s.ocp.vel_box = Vec3::Constant(cfg_.vel_box);
    s.ocp.terminal_box = cfg_.terminal_box;
    s.ocp.max_sqp_iter = cfg_.max_sqp_iter;

    s.filter.barrier = barrier;
    s.filter.clf = s.clf;
    s.filter.mean_motion = orbit_.n;
    s.filter.epsilon = cfg_.epsilon;
    s.filter.slack_weight = cfg_.slack_weight;
    s.filter.u_bound = cfg_.u_max;
    s.filter.hold_model = model_;
    validate(s.filter);
    return s;
  };
  fly_ = setup(Phase::FlyAround, cfg_.goal_fly_around, sphere);
  approach_ = setup(Phase::FinalApproach, cfg_.goal_capture, cone);
}

StateVec Scenario::sample_start(Phase p, RandomStream& rng) const {
  const PhaseSetup& s = phase(p);
  const double n = orbit_.n;
  for (int attempt = 0; attempt < 100000; ++attempt) {
    StateVec x;
    if (p == Phase::FlyAround) {
      const double radius = cfg_.az_radius - 5.0;
      Vec3 pos;
      do {
        pos = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)) * radius;
      } while (pos.norm() > radius);
      x.head<3>() = pos;
      for (int i = 3; i < 6; ++i) x(i) = rng.uniform(-0.05, 0.05);
    } else {
      const auto& cone = std::get<ConeBarrier>(s.barrier);
      // Uniform on the spherical cap of the corridor, then a random range.
      const double cos_alpha = rng.uniform(std::cos(cone.half_angle), 1.0);
      const double sin_alpha = std::sqrt(std::max(0.0, 1.0 - cos_alpha * cos_alpha));
      const double phi = rng.uniform(0.0, 2.0 * kPi);
      const Vec3 d = cone.axis;
      const Vec3 e1 = d.unitOrthogonal();
      const Vec3 e2 = d.cross(e1);
      const Vec3 dir = cos_alpha * d + sin_alpha * (std::cos(phi) * e1 + std::sin(phi) * e2);
      x.head<3>() = rng.uniform(12.0, 18.0) * dir;
      for (int i = 3; i < 6; ++i) x(i) = rng.uniform(-0.01, 0.01);
    }
    if (h_value(s.barrier, x) < 0.5) continue;
    if (big_h(s.barrier, x, n) < 0.5) continue;
    return x;
  }
  throw Error(ErrorCode::Config, "could not sample a safe start state");
}

bool Scenario::at_goal(Phase p, const StateVec& x) const {
  const StateVec e = x - phase(p).goal;
  return e.head<3>().norm() <= cfg_.conv_pos_tol && e.tail<3>().norm() <= cfg_.conv_vel_tol;
}

}  // namespace proxops
