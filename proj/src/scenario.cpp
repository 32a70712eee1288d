#include "plugpull/scenario.hpp"

#include <algorithm>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include "plugpull/errors.hpp"

extern char** environ;

namespace plugpull {

namespace pt = boost::property_tree;

std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::WP: return "WP";
    case Mode::ST: return "ST";
    case Mode::FF: return "FF";
  }
  return "?";
}

double DisturbanceChannel::value(double t) const {
  switch (kind) {
    case Kind::Constant: return amplitude;
    case Kind::Step: return t >= start ? amplitude : 0.0;
    case Kind::Sinusoid: return t >= start ? amplitude * std::sin(2.0 * std::numbers::pi * frequency * (t - start) + phase) : 0.0;
  }
  return 0.0;
}

bool DisturbanceChannel::active_in(Mode m) const {
  return (m == Mode::WP && in_wp) || (m == Mode::ST && in_st) || (m == Mode::FF && in_ff);
}

control::ControllerParams ScenarioConfig::controller_params() const {
  return {gains, dob, pos_dob, plant.nominal};
}

Vec8 ScenarioConfig::disturbance(double t, Mode m) const {
  Vec8 d = Vec8::Zero();
  for (const auto& c : disturbances)
    if (c.active_in(m)) d(c.coordinate) += c.value(t);
  return d;
}

namespace {

std::string format_double(double v) {
  char buf[40];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double parse_double(const std::string& key, const std::string& s) {
  const char* b = s.c_str();
  char* e = nullptr;
  const double v = std::strtod(b, &e);
  while (e && *e && std::isspace(static_cast<unsigned char>(*e))) ++e;
  if (e == b || (e && *e)) throw Error(ErrorCode::ConfigInvalid, key + ": expected a number, got '" + s + "'");
  return v;
}

std::vector<double> parse_list(const std::string& key, const std::string& s) {
  std::istringstream is(s);
  std::vector<double> out;
  std::string tok;
  while (is >> tok) out.push_back(parse_double(key, tok));
  return out;
}

// Visits every scalar field of the configuration with a reader or a writer.
template <typename V>
void visit(ScenarioConfig& c, V& v) {
  auto& a = c.plant.actual;
  v.section("plant");
  v.num("m_b", a.m_b);
  v.num("m_1", a.m_1);
  v.num("m_2", a.m_2);
  v.vec("J_b", a.J_b);
  v.vec("J_1", a.J_1);
  v.vec("J_2", a.J_2);
  v.vec("J_E", a.J_E);
  v.num("mount_depth", a.mount_depth);
  v.num("l_1", a.l_1);
  v.num("l_2", a.l_2);
  v.num("c_1", a.c_1);
  v.num("c_2", a.c_2);
  v.num("g", a.g);
  v.num("T_max", a.T_max);
  v.vec("tau_max", a.tau_max);
  v.choice("model", c.sim.plant_model, {{"full", PlantModel::Full}, {"nominal", PlantModel::Nominal}});

  auto& n = c.plant.nominal;
  v.section("nominal");
  v.num("m_b", n.m_b);
  v.num("m_1", n.m_1);
  v.num("m_2", n.m_2);
  v.vec("J_b", n.J_b);

  v.section("guard");
  v.num("F_TH", c.guard.F_TH);
  v.num("delta_eta", c.guard.delta_eta);
  v.flag("quasi_static", c.guard.quasi_static);

  v.section("trajectory");
  v.num("theta_max", c.traj.theta_max);
  v.num("t0_wp", c.traj.t0_wp);
  v.num("td_wp", c.traj.td_wp);
  v.num("st_window", c.traj.st_window);
  v.vec2("gamma_d", c.traj.gamma_d);

  v.section("gains");
  v.vec("att_kp", c.gains.att_kp);
  v.vec("att_kd", c.gains.att_kd);
  v.vec("pos_kp", c.gains.pos_kp);
  v.vec("pos_kd", c.gains.pos_kd);
  v.num("max_tilt", c.gains.max_tilt);

  v.section("dob");
  v.flag("enabled", c.dob.enabled);
  v.vec("a0", c.dob.a0);
  v.vec("a1", c.dob.a1);
  v.num("epsilon", c.dob.epsilon);
  v.flag("s_max_auto", c.s_max_auto);
  v.vec("s_max", c.dob.s_max);
  v.num("s_max_scale", c.s_max_scale);
  v.num("s_max_floor", c.s_max_floor);
  v.num("pos_a0", c.pos_dob.a0);
  v.num("pos_a1", c.pos_dob.a1);
  v.num("pos_epsilon", c.pos_dob.epsilon);
  v.num("pos_d_max", c.pos_dob.d_max);

  v.section("disturbance");
  v.disturbances(c.disturbances);

  v.section("jump");
  v.num("bound", c.jump.bound);

  v.section("integrator");
  v.num("dt", c.integrator.dt);
  v.num("t_end", c.integrator.t_end);
  v.integer("decimation", c.integrator.decimation);
  v.num("event_tolerance", c.integrator.event_tolerance);

  v.section("envelope");
  v.num("max_tilt", c.envelope.max_tilt);
  v.vec("box_half", c.envelope.box_half);
  v.num("max_speed", c.envelope.max_speed);
  v.num("max_rate", c.envelope.max_rate);

  v.section("sim");
  v.u64("seed", c.sim.seed);
  v.num("force_separation_at", c.sim.force_separation_at);
  v.num("gamma_dd_noise", c.sim.gamma_dd_noise);
  v.num("servo_tau", c.sim.servo_tau);
  v.vec("anchor", c.sim.anchor);
  v.num("yaw0", c.sim.yaw0);

  auto& an = c.analysis;
  v.section("analysis");
  v.num("sigma", an.sigma);
  v.num("delta_sigma", an.delta_sigma);
  v.integer("samples", an.samples);
  v.list("epsilons", an.epsilons);
  v.num("deviation_horizon", an.deviation_horizon);
  v.num("decay_horizon", an.decay_horizon);
  v.num("xi_perturbation", an.xi_perturbation);
  v.num("compare_mismatch", an.compare_mismatch);
  v.integer("input_samples", an.input_samples);
  v.num("w_rad", an.w_rad);
  v.num("w_rad_s", an.w_rad_s);
  v.num("w_m", an.w_m);
  v.num("w_m_s", an.w_m_s);
  v.num("w_N", an.w_N);
  v.num("w_Nm", an.w_Nm);
}

const std::map<std::string, DisturbanceChannel::Kind> kKinds{{"constant", DisturbanceChannel::Kind::Constant},
                                                              {"step", DisturbanceChannel::Kind::Step},
                                                              {"sinusoid", DisturbanceChannel::Kind::Sinusoid}};

std::string modes_string(const DisturbanceChannel& d) {
  std::string s;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!s.empty()) s += ' ';
    s += name;
  };
  add(d.in_wp, "WP");
  add(d.in_st, "ST");
  add(d.in_ff, "FF");
  return s;
}

class Writer {
 public:
  std::ostringstream os;

  void section(const char* name) {
    if (!first_) os << '\n';
    first_ = false;
    os << '[' << name << "]\n";
  }
  void num(const char* k, double& x) { os << k << " = " << format_double(x) << '\n'; }
  void integer(const char* k, int& x) { os << k << " = " << x << '\n'; }
  void u64(const char* k, std::uint64_t& x) { os << k << " = " << x << '\n'; }
  void flag(const char* k, bool& x) { os << k << " = " << (x ? "true" : "false") << '\n'; }
  void vec(const char* k, Vec3& x) {
    os << k << " = " << format_double(x(0)) << ' ' << format_double(x(1)) << ' ' << format_double(x(2)) << '\n';
  }
  void vec2(const char* k, Vec2& x) { os << k << " = " << format_double(x(0)) << ' ' << format_double(x(1)) << '\n'; }
  void list(const char* k, std::vector<double>& x) {
    os << k << " =";
    for (double d : x) os << ' ' << format_double(d);
    os << '\n';
  }
  template <typename E>
  void choice(const char* k, E& x, std::initializer_list<std::pair<const char*, E>> opts) {
    for (const auto& [name, val] : opts)
      if (val == x) os << k << " = " << name << '\n';
  }
  void disturbances(std::vector<DisturbanceChannel>& ds) {
    os << "count = " << ds.size() << '\n';
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const std::string p = "c" + std::to_string(i) + "_";
      auto& d = ds[i];
      os << p << "coordinate = " << d.coordinate << '\n';
      for (const auto& [name, kind] : kKinds)
        if (kind == d.kind) os << p << "kind = " << name << '\n';
      os << p << "amplitude = " << format_double(d.amplitude) << '\n';
      os << p << "start = " << format_double(d.start) << '\n';
      os << p << "frequency = " << format_double(d.frequency) << '\n';
      os << p << "phase = " << format_double(d.phase) << '\n';
      os << p << "modes = " << modes_string(d) << '\n';
    }
  }

 private:
  bool first_ = true;
};

class Reader {
 public:
  explicit Reader(const pt::ptree& tree) : tree_(tree) {}

  void section(const char* name) { sec_ = name; }
  void num(const char* k, double& x) {
    if (auto s = get(k)) x = parse_double(path(k), *s);
  }
  void integer(const char* k, int& x) {
    if (auto s = get(k)) x = static_cast<int>(std::llround(parse_double(path(k), *s)));
  }
  void u64(const char* k, std::uint64_t& x) {
    if (auto s = get(k)) {
      char* e = nullptr;
      x = std::strtoull(s->c_str(), &e, 10);
      if (e == s->c_str()) throw Error(ErrorCode::ConfigInvalid, path(k) + ": expected an unsigned integer");
    }
  }
  void flag(const char* k, bool& x) {
    if (auto s = get(k)) {
      if (*s == "true" || *s == "1" || *s == "yes") x = true;
      else if (*s == "false" || *s == "0" || *s == "no") x = false;
      else throw Error(ErrorCode::ConfigInvalid, path(k) + ": expected true/false, got '" + *s + "'");
    }
  }
  void vec(const char* k, Vec3& x) {
    if (auto s = get(k)) {
      const auto l = parse_list(path(k), *s);
      if (l.size() == 1) x.setConstant(l[0]);
      else if (l.size() == 3) x = Vec3(l[0], l[1], l[2]);
      else throw Error(ErrorCode::ConfigInvalid, path(k) + ": expected 1 or 3 numbers");
    }
  }
  void vec2(const char* k, Vec2& x) {
    if (auto s = get(k)) {
      const auto l = parse_list(path(k), *s);
      if (l.size() != 2) throw Error(ErrorCode::ConfigInvalid, path(k) + ": expected 2 numbers");
      x = Vec2(l[0], l[1]);
    }
  }
  void list(const char* k, std::vector<double>& x) {
    if (auto s = get(k)) x = parse_list(path(k), *s);
  }
  template <typename E>
  void choice(const char* k, E& x, std::initializer_list<std::pair<const char*, E>> opts) {
    if (auto s = get(k)) {
      for (const auto& [name, val] : opts)
        if (*s == name) {
          x = val;
          return;
        }
      throw Error(ErrorCode::ConfigInvalid, path(k) + ": unknown option '" + *s + "'");
    }
  }
  void disturbances(std::vector<DisturbanceChannel>& ds) {
    int count = static_cast<int>(ds.size());
    integer("count", count);
    if (count < 0) throw Error(ErrorCode::ConfigInvalid, "disturbance.count must be >= 0");
    ds.resize(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
      const std::string p = "c" + std::to_string(i) + "_";
      auto& d = ds[static_cast<std::size_t>(i)];
      integer((p + "coordinate").c_str(), d.coordinate);
      if (auto s = get((p + "kind").c_str())) {
        auto it = kKinds.find(*s);
        if (it == kKinds.end()) throw Error(ErrorCode::ConfigInvalid, path((p + "kind").c_str()) + ": unknown kind");
        d.kind = it->second;
      }
      num((p + "amplitude").c_str(), d.amplitude);
      num((p + "start").c_str(), d.start);
      num((p + "frequency").c_str(), d.frequency);
      num((p + "phase").c_str(), d.phase);
      if (auto s = get((p + "modes").c_str())) {
        d.in_wp = s->find("WP") != std::string::npos;
        d.in_st = s->find("ST") != std::string::npos;
        d.in_ff = s->find("FF") != std::string::npos;
      }
    }
  }

  /// Every key present in the tree that no visitor consumed.
  std::vector<std::string> unknown_keys() const {
    std::vector<std::string> out;
    for (const auto& [sec, body] : tree_) {
      if (body.empty() && !body.data().empty()) {
        out.push_back(sec);
        continue;
      }
      for (const auto& [key, val] : body)
        if (!seen_.count(sec + "." + key)) out.push_back(sec + "." + key);
    }
    return out;
  }

 private:
  std::string path(const char* k) const { return sec_ + "." + k; }
  std::optional<std::string> get(const char* k) {
    const std::string p = path(k);
    seen_.insert(p);
    auto child = tree_.get_child_optional(pt::ptree::path_type(sec_, '/'));
    if (!child) return std::nullopt;
    auto v = child->get_optional<std::string>(pt::ptree::path_type(k, '/'));
    if (!v) return std::nullopt;
    std::string s = *v;
    s.erase(0, s.find_first_not_of(" \t"));
    s.erase(s.find_last_not_of(" \t") + 1);
    return s;
  }

  const pt::ptree& tree_;
  std::string sec_;
  std::set<std::string> seen_;
};

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return s;
}

void apply_env_overrides(pt::ptree& tree) {
  const std::string prefix = kEnvPrefix;
  for (char** e = environ; e && *e; ++e) {
    const std::string entry = *e;
    if (entry.rfind(prefix, 0) != 0) continue;
    const auto eq = entry.find('=');
    if (eq == std::string::npos) continue;
    const std::string name = entry.substr(prefix.size(), eq - prefix.size());
    const auto sep = name.find("__");
    if (sep == std::string::npos) continue;
    const std::string sec = lower(name.substr(0, sep));
    const std::string key = name.substr(sep + 2);
    // Keys are case-sensitive in the file (F_TH, J_b); match ignoring case.
    std::string actual_key = key;
    if (auto child = tree.get_child_optional(pt::ptree::path_type(sec, '/'))) {
      for (const auto& [k, v] : *child)
        if (lower(k) == lower(key)) actual_key = k;
    }
    ScenarioConfig probe;
    Writer w;
    visit(probe, w);
    // Resolve the canonical spelling from the default serialization.
    std::istringstream canon(w.os.str());
    std::string line, cur;
    while (std::getline(canon, line)) {
      if (!line.empty() && line[0] == '[') cur = line.substr(1, line.size() - 2);
      const auto p = line.find(" = ");
      if (cur == sec && p != std::string::npos && lower(line.substr(0, p)) == lower(key)) actual_key = line.substr(0, p);
    }
    tree.put(pt::ptree::path_type(sec + "/" + actual_key, '/'), entry.substr(eq + 1));
  }
}

void sync_nominal_geometry(dynamics::PlantParams& p) {
  auto& n = p.nominal;
  const auto& a = p.actual;
  n.J_1 = a.J_1;
  n.J_2 = a.J_2;
  n.J_E = a.J_E;
  n.mount_depth = a.mount_depth;
  n.l_1 = a.l_1;
  n.l_2 = a.l_2;
  n.c_1 = a.c_1;
  n.c_2 = a.c_2;
  n.g = a.g;
  n.T_max = a.T_max;
  n.tau_max = a.tau_max;
}

}  // namespace

ScenarioConfig parse_config(const std::string& text, bool apply_env) {
  pt::ptree tree;
  std::istringstream is(text);
  try {
    pt::ini_parser::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw Error(ErrorCode::ConfigInvalid, e.what());
  }
  if (apply_env) apply_env_overrides(tree);
  ScenarioConfig c;
  Reader r(tree);
  visit(c, r);
  const auto unknown = r.unknown_keys();
  if (!unknown.empty()) throw Error(ErrorCode::ConfigInvalid, "unknown key '" + unknown.front() + "'");
  sync_nominal_geometry(c.plant);
  return c;
}

ScenarioConfig load_config(const std::string& path, bool apply_env) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::Io, "cannot open config '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), apply_env);
}

std::string serialize_config(const ScenarioConfig& cfg) {
  ScenarioConfig c = cfg;
  Writer w;
  visit(c, w);
  return w.os.str();
}

std::vector<std::string> validate_config(const ScenarioConfig& c) {
  std::vector<std::string> warnings;
  auto fail = [](const std::string& m) { throw Error(ErrorCode::ConfigInvalid, m); };
  auto positive3 = [&](const Vec3& v, const char* name) {
    if (!(v.minCoeff() > 0.0) || !v.allFinite()) fail(std::string(name) + " must be positive");
  };
  for (const auto* p : {&c.plant.actual, &c.plant.nominal}) {
    if (!(p->m_b > 0 && p->m_1 > 0 && p->m_2 > 0)) fail("masses must be positive");
    positive3(p->J_b, "J_b");
  }
  const auto& a = c.plant.actual;
  positive3(a.J_1, "J_1");
  positive3(a.J_2, "J_2");
  positive3(a.J_E, "J_E");
  positive3(a.tau_max, "tau_max");
  if (!(a.l_1 > 0 && a.l_2 > 0 && a.c_1 >= 0 && a.c_2 >= 0 && a.mount_depth >= 0)) fail("arm geometry must be positive");
  if (!(a.g > 0 && a.T_max > 0)) fail("g and T_max must be positive");
  if (!(c.plant.nominal.J_b.array() < a.J_b.array()).all())
    fail("nominal J_b must be below the actual J_b on every axis");
  if (!(c.traj.theta_max > 0 && c.traj.theta_max < std::numbers::pi / 2)) fail("theta_max must lie in (0, pi/2)");
  if (!(c.traj.td_wp > c.traj.t0_wp)) fail("td_wp must exceed t0_wp");
  if (!(c.traj.st_window >= 1e-4)) fail("st_window must be at least 1e-4 s");
  if (!(c.guard.delta_eta > 0)) fail("delta_eta must be positive");
  if (!(c.guard.F_TH > 0)) fail("F_TH must be positive");
  const double bound = a.T_max * std::sin(c.traj.theta_max);
  if (!(c.guard.F_TH < bound)) {
    std::ostringstream os;
    os << "F_TH = " << c.guard.F_TH << " N is not below T_max sin(theta_max) = " << bound
       << " N; separation is not guaranteed";
    warnings.push_back(os.str());
  }
  if (!(c.dob.epsilon > 0)) fail("dob.epsilon must be positive");
  if (!(c.dob.a0.minCoeff() > 0 && c.dob.a1.minCoeff() > 0)) fail("dob a0, a1 must be positive");
  if (!c.s_max_auto) positive3(c.dob.s_max, "s_max");
  if (!(c.pos_dob.epsilon > 0 && c.pos_dob.a0 > 0 && c.pos_dob.a1 > 0 && c.pos_dob.d_max > 0))
    fail("position DOB parameters must be positive");
  const double dt = c.integrator.dt;
  if (!(dt > 0 && dt <= 1e-3)) fail("dt must lie in (0, 1e-3]");
  if (dt > c.dob.epsilon / 10.0 * (1 + 1e-12)) fail("dt must not exceed dob.epsilon / 10");
  for (double e : c.analysis.epsilons)
    if (!(e > 0)) fail("analysis.epsilons must be positive");
  if (!(c.integrator.t_end > 0)) fail("t_end must be positive");
  if (c.integrator.decimation < 1) fail("decimation must be >= 1");
  if (!(c.integrator.event_tolerance > 0)) fail("event_tolerance must be positive");
  if (!(c.jump.bound >= 0)) fail("jump.bound must be non-negative");
  if (!(c.envelope.max_tilt > 0 && c.envelope.max_tilt < std::numbers::pi / 2)) fail("envelope.max_tilt invalid");
  positive3(c.envelope.box_half, "envelope.box_half");
  if (!(c.sim.gamma_dd_noise >= 0 && c.sim.servo_tau >= 0)) fail("noise and servo_tau must be non-negative");
  for (const auto& d : c.disturbances)
    if (d.coordinate < 0 || d.coordinate > 7) fail("disturbance coordinate must be in 0..7");
  if (!(c.analysis.sigma > 0 && c.analysis.delta_sigma > 0)) fail("sigma and delta_sigma must be positive");
  return warnings;
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t config_hash(const ScenarioConfig& cfg) { return fnv1a(serialize_config(cfg)); }

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
  has_spare_ = true;
  return r * std::cos(2.0 * std::numbers::pi * u2);
}

Vec3 Rng::in_ball(double radius) {
  Vec3 d(normal(), normal(), normal());
  const double n = d.norm();
  if (n == 0.0) return Vec3::Zero();
  return radius * std::cbrt(uniform()) * d / n;
}

}  // namespace plugpull
