#include <doctest.h>

#include <cstdlib>

#include "plugpull/errors.hpp"
#include "plugpull/scenario.hpp"

using namespace plugpull;

namespace {

ErrorCode code_of(const std::string& text) {
  try {
    validate_config(parse_config(text, false));
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Io;  // sentinel: nothing thrown
}

struct EnvGuard {
  std::string name;
  EnvGuard(const std::string& n, const std::string& v) : name(n) { setenv(n.c_str(), v.c_str(), 1); }
  ~EnvGuard() { unsetenv(name.c_str()); }
};

}  // namespace

TEST_CASE("empty text gives the defaults") {
  const ScenarioConfig c = parse_config("", false);
  const ScenarioConfig d;
  CHECK(serialize_config(c) == serialize_config(d));
  CHECK(c.guard.F_TH == 6.95);
  CHECK(c.traj.st_window == 0.08);
  CHECK(c.dob.a0 == Vec3::Constant(4.0));
  CHECK(c.dob.epsilon == 0.02);
}

TEST_CASE("serialization round-trips exactly") {
  ScenarioConfig c;
  c.guard.F_TH = 7.123456789012345;
  c.plant.nominal.J_b = Vec3(0.011, 0.012, 0.013);
  c.sim.seed = 18446744073709551615ull;
  c.analysis.epsilons = {0.05, 0.025};
  DisturbanceChannel d;
  d.coordinate = 4;
  d.kind = DisturbanceChannel::Kind::Sinusoid;
  d.amplitude = 0.3;
  d.frequency = 2.0;
  d.in_wp = false;
  c.disturbances.push_back(d);
  const std::string text = serialize_config(c);
  const ScenarioConfig r = parse_config(text, false);
  CHECK(serialize_config(r) == text);
  CHECK(config_hash(r) == config_hash(c));
  REQUIRE(r.disturbances.size() == 1);
  CHECK_FALSE(r.disturbances[0].in_wp);
  CHECK(r.disturbances[0].in_ff);
}

TEST_CASE("hash changes with any value") {
  ScenarioConfig a, b;
  b.jump.bound = 0.30000000000000004;
  CHECK(config_hash(a) != config_hash(b));
}

TEST_CASE("fnv1a reference values") {
  CHECK(fnv1a("") == 0xcbf29ce484222325ull);
  CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cull);
  CHECK(fnv1a("foobar") == 0x85944171f73967e8ull);
}

TEST_CASE("unknown keys and sections are rejected") {
  CHECK_THROWS_AS(parse_config("[guard]\nF_THX = 3\n", false), Error);
  CHECK_THROWS_AS(parse_config("[gaurd]\nF_TH = 3\n", false), Error);
  try {
    parse_config("[dob]\nepsilon = 0.02\nepsilom = 0.01\n", false);
    FAIL("no throw");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ConfigInvalid);
    CHECK(std::string(e.what()).find("dob.epsilom") != std::string::npos);
  }
}

TEST_CASE("malformed values are rejected") {
  CHECK_THROWS_AS(parse_config("[guard]\nF_TH = abc\n", false), Error);
  CHECK_THROWS_AS(parse_config("[plant]\nJ_b = 1 2\n", false), Error);
  CHECK_THROWS_AS(parse_config("[plant]\nmodel = hybrid\n", false), Error);
  CHECK_THROWS_AS(parse_config("[guard]\nquasi_static = maybe\n", false), Error);
}

TEST_CASE("hard violations are ConfigInvalid") {
  CHECK(code_of("[nominal]\nJ_b = 0.03 0.03 0.03\n") == ErrorCode::ConfigInvalid);
  CHECK(code_of("[integrator]\ndt = 0.005\n") == ErrorCode::ConfigInvalid);
  CHECK(code_of("[dob]\nepsilon = 0.001\n") == ErrorCode::ConfigInvalid);
  CHECK(code_of("[trajectory]\nst_window = 0.00005\n") == ErrorCode::ConfigInvalid);
  CHECK(code_of("[guard]\nF_TH = -1\n") == ErrorCode::ConfigInvalid);
  CHECK(code_of("") == ErrorCode::Io);
}

TEST_CASE("an unreachable threshold only warns") {
  const ScenarioConfig c = parse_config("[guard]\nF_TH = 20\n", false);
  const auto w = validate_config(c);
  REQUIRE(w.size() == 1);
  CHECK(w[0].find("separation is not guaranteed") != std::string::npos);
  CHECK(validate_config(ScenarioConfig{}).empty());
}

TEST_CASE("environment overrides file entries") {
  EnvGuard g1("PLUGPULL__GUARD__F_TH", "7.5");
  EnvGuard g2("PLUGPULL__DOB__EPSILON", "0.04");
  const ScenarioConfig c = parse_config("[guard]\nF_TH = 6.0\n");
  CHECK(c.guard.F_TH == 7.5);
  CHECK(c.dob.epsilon == 0.04);
  CHECK(parse_config("[guard]\nF_TH = 6.0\n", false).guard.F_TH == 6.0);
}

TEST_CASE("unknown environment keys are rejected too") {
  EnvGuard g("PLUGPULL__GUARD__NOPE", "1");
  CHECK_THROWS_AS(parse_config(""), Error);
}

TEST_CASE("load_config reports missing files as Io") {
  try {
    load_config("/nonexistent/x.ini", false);
    FAIL("no throw");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Io);
  }
}

TEST_CASE("disturbance channels evaluate per kind and mode") {
  DisturbanceChannel d;
  d.amplitude = 2.0;
  CHECK(d.value(0.3) == 2.0);
  d.kind = DisturbanceChannel::Kind::Step;
  d.start = 1.0;
  CHECK(d.value(0.5) == 0.0);
  CHECK(d.value(1.5) == 2.0);
  d.kind = DisturbanceChannel::Kind::Sinusoid;
  d.frequency = 1.0;
  CHECK(d.value(0.5) == 0.0);
  CHECK(d.value(1.25) == doctest::Approx(2.0));
  d.start = 0.0;
  CHECK(d.value(0.25) == doctest::Approx(2.0));
  d.in_st = false;
  CHECK(d.active_in(Mode::WP));
  CHECK_FALSE(d.active_in(Mode::ST));

  ScenarioConfig c;
  c.disturbances.push_back(d);
  CHECK(c.disturbance(0.25, Mode::WP)(4) == doctest::Approx(2.0));
  CHECK(c.disturbance(0.25, Mode::ST).norm() == 0.0);
}

TEST_CASE("rng is reproducible and stays in the ball") {
  Rng a(42), b(42);
  for (int k = 0; k < 100; ++k) CHECK(a.uniform() == b.uniform());
  Rng r(7);
  double max_norm = 0.0;
  for (int k = 0; k < 2000; ++k) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    max_norm = std::max(max_norm, r.in_ball(0.3).norm());
  }
  CHECK(max_norm <= 0.3);
  CHECK(max_norm > 0.29);
}
