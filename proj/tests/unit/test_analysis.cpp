#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "../support/oracles.hpp"
#include "plugpull/analysis.hpp"
#include "plugpull/errors.hpp"

using namespace plugpull;
using namespace plugpull::analysis;
using oracle::uniform;

namespace {

dynamics::PlantParams random_mismatch(std::mt19937_64& rng) {
  dynamics::PlantParams p = dynamics::PlantParams::defaults();
  for (int i = 0; i < 3; ++i) p.nominal.J_b(i) = uniform(rng, 0.3, 0.95) * p.actual.J_b(i);
  p.nominal.m_b = uniform(rng, 0.8, 1.2) * p.actual.m_b;
  return p;
}

AttitudeContext random_context(std::mt19937_64& rng, bool pinned) {
  const dynamics::PlantParams p = random_mismatch(rng);
  const double T = uniform(rng, 15.0, 35.0);
  const Vec2 gdd(uniform(rng, -2, 2), uniform(rng, -2, 2));
  const Vec3 tau0(uniform(rng, -0.3, 0.3), uniform(rng, -0.3, 0.3), uniform(rng, -0.3, 0.3));
  Vec8 tau_e = Vec8::Zero();
  tau_e.segment<3>(3) << uniform(rng, -0.2, 0.2), uniform(rng, -0.2, 0.2), uniform(rng, -0.2, 0.2);
  if (pinned) return wp_context(oracle::random_constrained_state(rng), T, gdd, tau0, tau_e, p);
  return free_context(oracle::random_free_state(rng), T, gdd, tau0, tau_e, p);
}

ManeuverPoint point_at(double px, double vx = 0.0) {
  ManeuverPoint z;
  z.mode = Mode::ST;
  z.x.q(0) = px;
  z.x.qd(0) = vx;
  return z;
}

}  // namespace

TEST_CASE("fast variables invert back to the filter state") {
  std::mt19937_64 rng(21);
  for (double eps : {0.04, 0.02, 0.01}) {
    control::DobParams p;
    p.epsilon = eps;
    p.a0 = Vec3(4, 5, 6);
    p.a1 = Vec3(4, 3, 5);
    for (int k = 0; k < 200; ++k) {
      control::DobState s;
      for (int i = 0; i < 3; ++i) {
        s.q1(i) = uniform(rng, -1, 1);
        s.q2(i) = uniform(rng, -2, 2);
        s.p1(i) = uniform(rng, -1, 1);
        s.p2(i) = uniform(rng, -5, 5);
      }
      const Vec3 eta(uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5), uniform(rng, -1, 1));
      const Vec3 rate(uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1));
      const Mat3 L = control::lambda_matrix(Vec3(0.0168, 0.0176, 0.0264), eta);
      const FastVars v = fast_variables(s, eta, rate, L, p);
      const control::DobState r = dob_state_from_fast(v, eta, rate, L, p);
      CHECK((r.q1 - s.q1).norm() < 1e-10);
      CHECK((r.q2 - s.q2).norm() < 1e-10);
      CHECK((r.p1 - s.p1).norm() < 1e-10);
      // p2 is recovered through a 1/eps^2 scaling
      CHECK((r.p2 - s.p2).norm() < 1e-10 / (eps * eps));
    }
  }
}

TEST_CASE("bumpless start has zero xi") {
  control::DobParams p;
  const Vec3 eta(0.1, -0.2, 0.3), rate(0.5, -0.4, 0.1);
  const Mat3 L = control::lambda_matrix(Vec3(0.0168, 0.0176, 0.0264), eta);
  const control::DobState s = control::dob_bumpless_init(eta, rate, Vec3(0.2, 0.1, 0.0), L, p);
  CHECK(fast_variables(s, eta, rate, L, p).xi.norm() < 1e-12);
}

TEST_CASE("quasi-steady input solves the implicit equation") {
  std::mt19937_64 rng(31);
  for (int k = 0; k < 300; ++k) {
    const AttitudeContext c = random_context(rng, k % 2 == 0);
    const Vec3 u = quasi_steady_ustar(c);
    const Vec3 s_max = (u.cwiseAbs() / 0.9).cwiseMax(0.05) * 1.2;
    const UstarReport r = quasi_steady_report(c, s_max);
    CHECK(r.inside_identity_region);
    CHECK(r.equation_residual < 1e-9 * std::max(1.0, u.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("reduced model equals the nominal model at the quasi-steady input") {
  std::mt19937_64 rng(41);
  for (int k = 0; k < 300; ++k) {
    const AttitudeContext c = random_context(rng, k % 2 == 1);
    const Vec3 s_max = (quasi_steady_ustar(c).cwiseAbs() / 0.9).cwiseMax(0.05) * 1.2;
    const ReducedResidual r = reduced_model_residual(c, s_max);
    CHECK(r.inside_identity_region);
    CHECK(r.residual.cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("saturated quasi-steady input is flagged") {
  std::mt19937_64 rng(43);
  const AttitudeContext c = random_context(rng, true);
  const Vec3 u = quasi_steady_ustar(c);
  CHECK_FALSE(quasi_steady_report(c, u.cwiseAbs() * 0.5 + Vec3::Constant(1e-6)).inside_identity_region);
}

TEST_CASE("sector norm below one for 0.8 J at level attitude, arm down") {
  ScenarioConfig cfg;
  REQUIRE(cfg.plant.nominal.J_b.isApprox(0.8 * cfg.plant.actual.J_b));
  cfg.dob.s_max = Vec3(2.0, 30.0, 1.0);
  Rng rng(1);
  dynamics::ConstrainedState xc;
  xc.r << 0, 0, 0, cfg.traj.gamma_d;
  xc.anchor = cfg.sim.anchor;
  const AttitudeContext wp = wp_context(xc, 25.0, Vec2::Zero(), Vec3::Zero(), Vec8::Zero(), cfg.plant);
  const SectorReport a = gamma_sector_check(wp, cfg.dob.s_max, rng);
  CHECK(a.kappa < 1.0);
  CHECK(a.pass);
  dynamics::FreeState xf;
  xf.q.tail<2>() = cfg.traj.gamma_d;
  const AttitudeContext ff = free_context(xf, 25.0, Vec2::Zero(), Vec3::Zero(), Vec8::Zero(), cfg.plant);
  const SectorReport b = gamma_sector_check(ff, cfg.dob.s_max, rng);
  CHECK(b.kappa < 1.0);
  CHECK(b.pass);
  CHECK(gamma_map(ff, Vec3::Zero(), Vec3::Zero(), cfg.dob.s_max).norm() == 0.0);
}

TEST_CASE("sector norm matches a direct eigen computation") {
  std::mt19937_64 rng(51);
  for (int k = 0; k < 50; ++k) {
    const AttitudeContext c = random_context(rng, k % 2 == 0);
    const Mat3 P = c.Lambda * c.G * c.G_bar.inverse() * c.Lambda.inverse();
    const Mat3 E = Mat3::Identity() - P;
    const double ref = std::sqrt(Eigen::SelfAdjointEigenSolver<Mat3>(E.transpose() * E).eigenvalues().maxCoeff());
    Rng r(k);
    CHECK(gamma_sector_check(c, Vec3::Constant(100.0), r, 4).kappa == doctest::Approx(ref).epsilon(1e-9));
  }
}

TEST_CASE("inertia hypothesis violation is detected over the grid") {
  ScenarioConfig cfg;
  cfg.dob.s_max = Vec3(2.0, 30.0, 1.0);
  CHECK(sector_over_grid(cfg).pass);
  CHECK_FALSE(sector_over_grid(cfg, 7, 50.0).pass);  // beyond the operating tilt
  cfg.plant.nominal.J_b = 1.5 * cfg.plant.actual.J_b;
  CHECK_FALSE(sector_over_grid(cfg).pass);
  cfg.plant.nominal.J_b = 3.0 * cfg.plant.actual.J_b;
  const TraceSectorReport r = sector_over_grid(cfg);
  CHECK_FALSE(r.pass);
  CHECK(r.max_kappa >= 1.0);
}

TEST_CASE("decay fit recovers an exponential rate") {
  std::vector<double> t, n;
  for (int k = 0; k < 2000; ++k) {
    t.push_back(k * 1e-4);
    n.push_back(0.1 * std::exp(-50.0 * t.back()) + 1e-7);
  }
  const DecayFit f = fit_decay(t, n, 0.02);
  CHECK_FALSE(f.skipped);
  CHECK(f.rate == doctest::Approx(50.0).epsilon(0.01));
  CHECK(f.lambda2 == doctest::Approx(1.0).epsilon(0.01));
  CHECK(f.lambda1 == doctest::Approx(0.1).epsilon(0.01));
  CHECK(f.floor == doctest::Approx(1e-7).epsilon(0.01));
}

TEST_CASE("decay fit skips a signal already at its floor") {
  std::vector<double> t(100), n(100, 0.0);
  for (int k = 0; k < 100; ++k) t[k] = k * 1e-3;
  CHECK(fit_decay(t, n, 0.02).skipped);
}

TEST_CASE("decay fit on a transient shorter than five samples is degenerate") {
  std::vector<double> t, n;
  for (int k = 0; k < 100; ++k) {
    t.push_back(k * 1e-3);
    n.push_back(k < 3 ? 1.0 : 1e-6);
  }
  try {
    fit_decay(t, n, 0.02);
    FAIL("no throw");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::FitDegenerate);
  }
}

TEST_CASE("unperturbed decay run stays at zero offset") {
  ScenarioConfig cfg;
  cfg.s_max_auto = false;
  cfg.dob.s_max = Vec3(2.0, 30.0, 1.0);
  cfg.analysis.decay_horizon = 0.1;
  CHECK(fast_decay_fit(cfg, 0.02, Vec3::Zero()).skipped);
}

TEST_CASE("metric distance is a weighted norm") {
  AnalysisConfig w;
  const ManeuverPoint a = point_at(0.0), b = point_at(0.3), c = point_at(0.0, 1.0);
  CHECK(metric_distance(a, b, w) == doctest::Approx(0.3 * w.w_m));
  CHECK(metric_distance(a, c, w) == doctest::Approx(w.w_m_s));
  CHECK(metric_distance(b, a, w) == metric_distance(a, b, w));
  CHECK(metric_distance(b, c, w) <= metric_distance(b, a, w) + metric_distance(a, c, w));
  ManeuverPoint d = a;
  d.u.thrust = 10.0;
  CHECK(metric_distance(a, d, w) == doctest::Approx(10.0 * w.w_N));
}

TEST_CASE("coverage of samples on a line") {
  AnalysisConfig w;
  std::mt19937_64 rng(61);
  const double L = 1.0, delta = 0.05;
  std::vector<ManeuverPoint> s;
  for (int k = 0; k < 400; ++k) s.push_back(point_at(uniform(rng, 0.0, L)));
  const CoverageSet c = build_coverage_set(s, delta, w);
  CHECK(c.centers.size() <= static_cast<std::size_t>(std::ceil(L / (2 * delta))) + 1);
  for (std::size_t i = 0; i < s.size(); ++i) CHECK(metric_distance(s[i], s[c.centers[c.assignment[i]]], w) <= delta);
  CHECK(c.max_distance <= delta);
  CHECK(build_coverage_set(s, 10.0, w).centers.size() == 1);
}

TEST_CASE("st guard distance is infinite before the window ends") {
  GuardContext c;
  c.td_st = 1.0;
  ManeuverPoint z = point_at(0.0);
  z.t = 0.5;
  z.x.q(4) = 0.01;
  CHECK(std::isinf(guard_distance(Mode::ST, z, c)));
  z.t = 1.5;
  CHECK(guard_distance(Mode::ST, z, c) == doctest::Approx(0.01 - c.guard.delta_eta));
  CHECK(std::isinf(guard_distance(Mode::FF, z, c)));
}

TEST_CASE("wp guard distance changes sign across the threshold") {
  GuardContext c;
  c.guard.quasi_static = true;
  c.guard.F_TH = 5.0;
  ManeuverPoint z;
  z.mode = Mode::WP;
  z.u.thrust = 20.0;
  z.x.q(4) = -0.2;  // -T sin(theta) = 3.97 N
  CHECK(guard_distance(Mode::WP, z, c) > 0.0);
  z.x.q(4) = -0.3;  // 5.91 N
  CHECK(guard_distance(Mode::WP, z, c) < 0.0);
}

TEST_CASE("single maneuver clearance against sigma") {
  ScenarioConfig cfg = nominal_counterpart(ScenarioConfig{});
  cfg.s_max_auto = false;
  hybrid::SimOptions opt;
  opt.stop_at_st_ff = true;
  const hybrid::HybridTrace tr = hybrid::simulate(cfg, opt);
  REQUIRE(!tr.events.empty());
  std::vector<ManeuverPoint> wp;
  for (const auto& s : tr.samples)
    if (s.mode == Mode::WP && s.t < tr.events[0].t - 0.5) wp.push_back(to_point(s));
  GuardContext c{cfg.guard, cfg.plant.nominal, cfg.sim.anchor, 0.0, cfg.analysis};
  const SingleVerdict probe = check_single_maneuver(wp, c, tr.home.position, cfg.envelope, 0.0);
  REQUIRE(probe.margin > 0.0);
  CHECK(check_single_maneuver(wp, c, tr.home.position, cfg.envelope, 0.5 * probe.margin).pass);
  CHECK_FALSE(check_single_maneuver(wp, c, tr.home.position, cfg.envelope, 2.0 * probe.margin).pass);
}

TEST_CASE("transition verdict names the failing centers") {
  ApproachVerdict a;
  a.pass = true;
  CoverageSet cs;
  cs.centers = {3, 8, 12};
  std::vector<SingleVerdict> post(3);
  post[1].pass = false;
  const TransitionVerdict v = check_transition_maneuver(a, cs, post, {"ok", "EnvelopeExit", "ok"});
  CHECK_FALSE(v.pass);
  REQUIRE(v.offending_centers.size() == 1);
  CHECK(v.offending_centers[0] == 1);
  post[1].pass = true;
  CHECK(check_transition_maneuver(a, cs, post, {"", "", ""}).pass);
  a.pass = false;
  CHECK_FALSE(check_transition_maneuver(a, cs, post, {"", "", ""}).pass);
  CHECK_THROWS_AS(check_transition_maneuver(a, cs, {}, {}), Error);
}

TEST_CASE("deviation of misaligned traces is an error") {
  hybrid::HybridTrace a, b;
  a.samples.resize(3);
  b.samples.resize(2);
  try {
    nominal_actual_deviation(a, b, AnalysisConfig{});
    FAIL("no throw");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::TraceMisaligned);
  }
  b.samples.resize(3);
  b.samples[2].t = 0.5;
  CHECK_THROWS_AS(nominal_actual_deviation(a, b, AnalysisConfig{}), Error);
  b.samples[2].t = 0.0;
  CHECK(nominal_actual_deviation(a, b, AnalysisConfig{}) == 0.0);
  CHECK(trace_sup_difference(a, b) == 0.0);
}

TEST_CASE("nominal counterpart drops dob and disturbance") {
  ScenarioConfig c;
  c.disturbances.push_back({});
  const ScenarioConfig n = nominal_counterpart(c);
  CHECK(n.sim.plant_model == PlantModel::Nominal);
  CHECK_FALSE(n.dob.enabled);
  CHECK(n.disturbances.empty());
}
