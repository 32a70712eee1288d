#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "../support/oracles.hpp"
#include "plugpull/arm_dynamics.hpp"
#include "plugpull/errors.hpp"

using namespace plugpull;
using namespace plugpull::dynamics;

namespace {

const ArmParams kParams{};

FreeState hover_state() {
  FreeState x;
  x.q << 0.2, -0.1, 1.0, 0, 0, 0.4, 0, 0;
  return x;
}

// Generalized force produced by a constant input at a state, as RK4 dynamics.
struct FreeRk4 {
  ControlInput u;
  Vec8 tau_e = Vec8::Zero();
  const ArmParams& p;

  Eigen::Matrix<double, 16, 1> deriv(const Eigen::Matrix<double, 16, 1>& s) const {
    FreeState x;
    x.q = s.head<8>();
    x.qd = s.tail<8>();
    Eigen::Matrix<double, 16, 1> d;
    d << x.qd, free_flight_flow(x, u, tau_e, p);
    return d;
  }
};

template <typename Sys, typename V>
V rk4(const Sys& sys, const V& s, double h) {
  const V k1 = sys.deriv(s);
  const V k2 = sys.deriv(s + 0.5 * h * k1);
  const V k3 = sys.deriv(s + 0.5 * h * k2);
  const V k4 = sys.deriv(s + h * k3);
  return s + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
}

}  // namespace

TEST_CASE("link_kinematics with level body and straight-down arm") {
  FreeState x;
  x.q << 0.3, 0.2, 1.0, 0, 0, 0, 0, 0;
  const FramePoses f = link_kinematics(x, kParams);
  const Vec3 p_BE(0, 0, -(kParams.mount_depth + kParams.l_1 + kParams.l_2));
  const Vec3 p_B1(0, 0, -(kParams.mount_depth + kParams.c_1));
  CHECK((f.p_I1 - (f.p_IE + p_B1 - p_BE)).norm() < 1e-15);
  CHECK((f.p_IE - x.position() - p_BE).norm() < 1e-15);
}

TEST_CASE("link_kinematics matches the independent forward kinematics") {
  std::mt19937_64 rng(11);
  for (int n = 0; n < 50; ++n) {
    const FreeState x = oracle::random_free_state(rng);
    const FramePoses f = link_kinematics(x, kParams);
    const auto fk = oracle::forward_kinematics(x.q, kParams);
    CHECK((f.p_I1 - fk[1].pos).norm() < 1e-12);
    CHECK((f.p_I2 - fk[2].pos).norm() < 1e-12);
    CHECK((f.p_IE - fk[3].pos).norm() < 1e-12);
    CHECK((f.R_IB * f.R_BE - fk[3].rot).norm() < 1e-12);
    const double h = 1e-6;
    const Vec3 v_fd = (oracle::effector_position(x.q + h * x.qd, kParams) -
                       oracle::effector_position(x.q - h * x.qd, kParams)) / (2 * h);
    CHECK((f.v_IE - v_fd).norm() < 1e-8);
  }
}

TEST_CASE("constrained chart keeps the end-effector still") {
  std::mt19937_64 rng(12);
  const double h = 1e-6;
  for (int n = 0; n < 50; ++n) {
    const ConstrainedState x = oracle::random_constrained_state(rng);
    ConstrainedState xp = x, xm = x;
    xp.r += h * x.rd;
    xm.r -= h * x.rd;
    const Vec3 vE = (link_kinematics(xp, kParams).p_IE - link_kinematics(xm, kParams).p_IE) / (2 * h);
    CHECK(vE.norm() < 1e-6);
    CHECK((link_kinematics(x, kParams).p_IE - x.anchor).norm() < 1e-12);
    CHECK(link_kinematics(x, kParams).v_IE.norm() < 1e-12);
  }
}

TEST_CASE("frozen arm: end-effector rate is the body rate seen in {E}") {
  ConstrainedState x;
  x.r << 0.1, -0.2, 0.3, -0.7, -0.5;
  x.rd << 0.4, -0.3, 0.2, 0, 0;
  const FramePoses f = link_kinematics(x, kParams);
  const Mat3 Q = math::euler_rate_matrix(math::EulerAngles(x.eta()));
  CHECK((f.omega_E - f.R_BE.transpose() * Q * x.eta_dot()).norm() < 1e-14);
}

TEST_CASE("free_flight_terms match the energy-Hessian oracle") {
  std::mt19937_64 rng(13);
  for (int n = 0; n < 20; ++n) {
    const FreeState x = oracle::random_free_state(rng);
    const ELTerms<8> t = free_flight_terms(x, kParams);
    CHECK(oracle::rel_err(t.M, oracle::mass_matrix(x.q, kParams)) < 1e-5);
    CHECK(oracle::rel_err(t.K, oracle::gravity_vector(x.q, kParams)) < 1e-5);
    CHECK(oracle::rel_err(t.C, oracle::coriolis_vector(x.q, x.qd, kParams)) < 1e-5);
    CHECK((t.M - t.M.transpose()).norm() < 1e-12);
    CHECK(min_eigenvalue(t.M) > 1e-6);
  }
}

TEST_CASE("hover equilibrium gives zero acceleration") {
  const FreeState x = hover_state();
  const ELTerms<8> t = free_flight_terms(x, kParams);
  // Solve Ju^T u = K in least squares; exact because the arm hangs straight down.
  const Vec6 u = t.Ju.transpose().colPivHouseholderQr().solve(t.K);
  CHECK(std::abs(u(0) - kParams.total_mass() * kParams.g) < 1e-9);
  CHECK((t.Ju.transpose() * u - t.K).norm() < 1e-9);
  CHECK(free_flight_flow(x, ControlInput::from_vec(u), Vec8::Zero(), kParams).norm() < 1e-9);

  ArmParams zero_g = kParams;
  zero_g.g = 0.0;
  FreeState rest = hover_state();
  rest.q(6) = -0.6;
  CHECK(free_flight_flow(rest, ControlInput{}, Vec8::Zero(), zero_g).norm() < 1e-12);
}

TEST_CASE("free flow is affine in the input") {
  std::mt19937_64 rng(14);
  const FreeState x = oracle::random_free_state(rng);
  const Vec6 u0 = (Vec6() << 20, 0.1, -0.2, 0.05, 0.01, -0.02).finished();
  const Vec6 du = (Vec6() << 1, 0.02, 0.01, -0.03, 0.004, 0.002).finished();
  const Vec8 a0 = free_flight_flow(x, ControlInput::from_vec(u0), Vec8::Zero(), kParams);
  const Vec8 a1 = free_flight_flow(x, ControlInput::from_vec(u0 + du), Vec8::Zero(), kParams);
  const Vec8 a2 = free_flight_flow(x, ControlInput::from_vec(u0 + 2 * du), Vec8::Zero(), kParams);
  CHECK(((a2 - a0) - 2 * (a1 - a0)).norm() < 1e-9);
}

TEST_CASE("ballistic arc conserves mechanical energy") {
  FreeState x = hover_state();
  x.q(6) = -0.5;
  x.q(7) = -0.4;
  x.qd << 0.3, -0.2, 1.0, 0.5, -0.4, 0.8, 1.2, -0.9;
  FreeRk4 sys{ControlInput{}, Vec8::Zero(), kParams};
  Eigen::Matrix<double, 16, 1> s;
  s << x.q, x.qd;
  const double e0 = mechanical_energy(x, kParams);
  for (int k = 0; k < 10000; ++k) s = rk4(sys, s, 1e-4);
  x.q = s.head<8>();
  x.qd = s.tail<8>();
  CHECK(std::abs(mechanical_energy(x, kParams) - e0) < 1e-4);
}

TEST_CASE("powered flight: energy change equals input work") {
  FreeState x = hover_state();
  x.q(6) = -0.8;
  x.qd << 0.1, 0.0, 0.2, 0.2, -0.1, 0.3, 0.5, -0.2;
  const ControlInput u{24.0, Vec3(0.01, -0.02, 0.005), Vec2(0.03, -0.01)};
  Vec8 tau_e = Vec8::Zero();
  tau_e(0) = 0.4;
  tau_e(4) = -0.01;
  FreeRk4 inner{u, tau_e, kParams};
  // Augmented with the work integral of generalized input + disturbance forces.
  struct Aug {
    const FreeRk4& f;
    Eigen::Matrix<double, 17, 1> deriv(const Eigen::Matrix<double, 17, 1>& s) const {
      Eigen::Matrix<double, 17, 1> d;
      d.head<16>() = f.deriv(s.head<16>());
      const Vec8 qd = s.segment<8>(8);
      const Vec8 gen = input_jacobian(s.segment<3>(3)).transpose() * f.u.vec() + f.tau_e;
      d(16) = gen.dot(qd);
      return d;
    }
  } aug{inner};
  Eigen::Matrix<double, 17, 1> s;
  s << x.q, x.qd, 0.0;
  const double e0 = mechanical_energy(x, kParams);
  for (int k = 0; k < 10000; ++k) s = rk4(aug, s, 1e-4);
  x.q = s.head<8>();
  x.qd = s.segment<8>(8);
  CHECK(std::abs(mechanical_energy(x, kParams) - e0 - s(16)) < 1e-3);
}

TEST_CASE("wire_pulling_terms are symmetric and positive definite") {
  std::mt19937_64 rng(15);
  for (int n = 0; n < 100; ++n) {
    const ConstrainedState x = oracle::random_constrained_state(rng);
    const WireTerms w = wire_pulling_terms(x, kParams);
    CHECK((w.terms.M - w.terms.M.transpose()).norm() < 1e-12);
    CHECK(min_eigenvalue(w.terms.M) > 1e-6);
  }
}

TEST_CASE("pinned inertia seen through Q matches a term-by-term assembly") {
  // Body, link and tip contributions to the rotational kinetic energy about the
  // fixed pivot, expressed in body rates: M* = sum m [s_i - s_E]^T [s_i - s_E] + R_i I_i R_i^T.
  std::mt19937_64 rng(16);
  for (int n = 0; n < 50; ++n) {
    const ConstrainedState x = oracle::random_constrained_state(rng);
    const WireTerms w = wire_pulling_terms(x, kParams);
    const Mat3 Q = math::euler_rate_matrix(math::EulerAngles(x.eta()));
    const Mat3 Qi = Q.inverse();
    const Mat3 Mstar = Qi.transpose() * w.terms.M.topLeftCorner<3, 3>() * Qi;

    Vec8 q;
    q << Vec3::Zero(), Vec3::Zero(), x.gamma();
    const auto fk = oracle::forward_kinematics(q, kParams);
    const Vec3 sE = fk[3].pos;
    const std::array<double, 3> m{kParams.m_b, kParams.m_1, kParams.m_2};
    const std::array<Vec3, 4> J{kParams.J_b, kParams.J_1, kParams.J_2, kParams.J_E};
    Mat3 expect = Mat3::Zero();
    for (int i = 0; i < 4; ++i) {
      if (i < 3) {
        const Mat3 S = math::skew(fk[i].pos - sE);
        expect += m[i] * S.transpose() * S;
      }
      expect += fk[i].rot * J[i].asDiagonal() * fk[i].rot.transpose();
    }
    CHECK((Mstar - expect).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("static perch with gravity-cancelling torques is an equilibrium") {
  ConstrainedState x;
  x.r << 0.0, -0.25, 0.0, -0.785, -0.785;
  x.anchor = Vec3(1.0, 0.0, 1.0);
  const WireTerms w = wire_pulling_terms(x, kParams);
  // Fix thrust, solve for tau_b and tau_gamma so that J_ur^T u = K_r.
  const double T = 20.0;
  Eigen::Matrix<double, 5, 5> B = w.terms.Ju.transpose().rightCols<5>();
  const Vec5 rhs = w.terms.K - w.terms.Ju.transpose().col(0) * T;
  const Vec5 tail = B.fullPivLu().solve(rhs);
  Vec6 u;
  u << T, tail;
  CHECK(wire_pulling_flow(x, ControlInput::from_vec(u), Vec5::Zero(), kParams).norm() < 1e-10);

  // Exact reaction vs quasi-static value: same order at a true equilibrium.
  const EffectorForce f = end_effector_force(x, ControlInput::from_vec(u), kParams);
  CHECK(std::abs(f.exact.x() - f.quasi_static_x) < 0.05 * T);
}

TEST_CASE("quasi-static pulling force") {
  ConstrainedState x;
  x.r << 0.0, -14.4 * std::numbers::pi / 180, 0.0, -0.785, -0.785;
  const ControlInput u{20.0, Vec3::Zero(), Vec2::Zero()};
  CHECK(end_effector_force(x, u, kParams).quasi_static_x == doctest::Approx(4.973).epsilon(1e-3));
  x.r(1) = 0.0;
  CHECK(end_effector_force(x, u, kParams).quasi_static_x == 0.0);
}

TEST_CASE("constraint reaction equals the KKT multiplier") {
  std::mt19937_64 rng(17);
  for (int n = 0; n < 30; ++n) {
    const ConstrainedState x = oracle::random_constrained_state(rng);
    const ControlInput u{oracle::uniform(rng, 10, 30), Vec3(0.1, -0.2, 0.05), Vec2(0.02, -0.01)};
    Vec8 tau_e = Vec8::Zero();
    tau_e(0) = 0.3;
    tau_e(5) = -0.02;
    const FreeState xf = embed(x, kParams);
    const ELTerms<8> t = free_flight_terms(xf, kParams);
    // [M -J^T; J 0][qdd; lam] = [rhs; -Jdot qd], Jdot qd by finite differences.
    const Mat3x8 J = effector_jacobian(xf, kParams);
    const double h = 1e-6;
    FreeState xp = xf, xm = xf;
    xp.q += h * xf.qd;
    xm.q -= h * xf.qd;
    const Vec3 Jdot_qd = (effector_jacobian(xp, kParams) - effector_jacobian(xm, kParams)) / (2 * h) * xf.qd;
    Eigen::Matrix<double, 11, 11> K = Eigen::Matrix<double, 11, 11>::Zero();
    K.topLeftCorner<8, 8>() = t.M;
    K.topRightCorner<8, 3>() = -J.transpose();
    K.bottomLeftCorner<3, 8>() = J;
    Eigen::Matrix<double, 11, 1> b;
    b << -t.C - t.K + t.Ju.transpose() * u.vec() + tau_e, -Jdot_qd;
    const Eigen::Matrix<double, 11, 1> sol = K.fullPivLu().solve(b);

    const EffectorForce f = end_effector_force(x, u, kParams, tau_e);
    CHECK((f.exact - sol.tail<3>()).norm() < 1e-6 * std::max(1.0, sol.tail<3>().norm()));

    const WireTerms w = wire_pulling_terms(x, kParams);
    const Vec5 rdd = wire_pulling_flow(x, u, w.map.S.transpose() * tau_e, kParams);
    CHECK((rdd - sol.segment<5>(3)).norm() < 1e-6 * std::max(1.0, rdd.norm()));
  }
}

TEST_CASE("disturbance enters the pinned flow affinely") {
  ConstrainedState x;
  x.r << 0.05, -0.2, 0.1, -0.8, -0.7;
  x.rd << 0.1, 0.2, -0.1, 0.0, 0.0;
  const ControlInput u{22.0, Vec3(0.01, 0.02, 0.0), Vec2::Zero()};
  Vec5 d = Vec5::Zero();
  d(0) = 1e-3;
  const WireTerms w = wire_pulling_terms(x, kParams);
  const Vec5 diff = wire_pulling_flow(x, u, d, kParams) - wire_pulling_flow(x, u, Vec5::Zero(), kParams);
  CHECK((diff - w.terms.M.llt().solve(d)).norm() < 1e-12);
}

TEST_CASE("attitude_submodel reproduces the eta rows of the full pinned flow") {
  std::mt19937_64 rng(18);
  for (int n = 0; n < 100; ++n) {
    const ConstrainedState x = oracle::random_constrained_state(rng);
    const ControlInput u{oracle::uniform(rng, 5, 35),
                         Vec3(oracle::uniform(rng, -0.5, 0.5), oracle::uniform(rng, -0.5, 0.5),
                              oracle::uniform(rng, -0.5, 0.5)),
                         Vec2(oracle::uniform(rng, -0.1, 0.1), oracle::uniform(rng, -0.1, 0.1))};
    Vec5 tau_e;
    for (int i = 0; i < 5; ++i) tau_e(i) = oracle::uniform(rng, -0.1, 0.1);
    const Vec5 rdd = wire_pulling_flow(x, u, tau_e, kParams);
    const AttitudeModel m = attitude_submodel(x, u.thrust, rdd.tail<2>(), tau_e, kParams);
    CHECK((m.F + m.G * u.tau_b - rdd.head<3>()).norm() < 1e-9);

    const AttitudeModel m0 = attitude_submodel(x, u.thrust, rdd.tail<2>(), tau_e, kParams);
    CHECK((m0.F - (m.F + m.G * Vec3::Zero())).norm() == 0.0);
  }
}

TEST_CASE("attitude gain matrix is invertible across the envelope") {
  const double deg = std::numbers::pi / 180;
  for (double roll = -60 * deg; roll <= 60 * deg; roll += 15 * deg) {
    for (double pitch = -60 * deg; pitch <= 60 * deg; pitch += 15 * deg) {
      ConstrainedState x;
      x.r << roll, pitch, 0.3, -0.785, -0.785;
      const AttitudeModel m = attitude_submodel(x, 20.0, Vec2::Zero(), Vec5::Zero(), kParams);
      Eigen::JacobiSVD<Mat3> svd(m.G);
      CHECK(svd.singularValues().minCoeff() > 0.0);
    }
  }
}

TEST_CASE("nominal attitude model") {
  ConstrainedState x;
  x.r << 0.1, -0.2, 0.3, -0.7, -0.8;
  x.rd << 0.2, -0.1, 0.05, 0.0, 0.0;
  const Vec2 gdd(0.1, -0.2);
  const AttitudeModel actual = attitude_submodel(x, 21.0, gdd, Vec5::Zero(), kParams);
  const AttitudeModel nominal = nominal_attitude_model(x, 21.0, gdd, kParams);
  CHECK((actual.F - nominal.F).norm() < 1e-9);

  ConstrainedState level;
  const PlantParams pp = PlantParams::defaults();
  const AttitudeModel at0 = nominal_attitude_model(level, 21.0, Vec2::Zero(), pp.nominal);
  CHECK((at0.G - Mat3(pp.nominal.J_b.cwiseInverse().asDiagonal())).norm() < 1e-15);
}

TEST_CASE("free attitude submodel reproduces the eta rows of the free flow") {
  std::mt19937_64 rng(19);
  for (int n = 0; n < 50; ++n) {
    const FreeState x = oracle::random_free_state(rng);
    const ControlInput u{22.0, Vec3(0.1, -0.05, 0.02), Vec2(0.01, 0.03)};
    Vec8 tau_e = Vec8::Zero();
    tau_e(1) = 0.2;
    const Vec8 qdd = free_flight_flow(x, u, tau_e, kParams);
    const AttitudeModel m = free_attitude_submodel(x, u.thrust, qdd.tail<2>(), tau_e, kParams);
    CHECK((m.F + m.G * u.tau_b - qdd.segment<3>(3)).norm() < 1e-9);
  }
}

TEST_CASE("servo lock solves for the joint torque that realises gamma_dd") {
  std::mt19937_64 rng(20);
  const ConstrainedState x = oracle::random_constrained_state(rng);
  const WireTerms w = wire_pulling_terms(x, kParams);
  const Vec2 gdd(0.3, -0.2);
  const ServoLockedWire s = wire_pulling_servo_locked(w, 20.0, Vec3(0.1, 0, 0), gdd, Vec5::Zero());
  const Vec5 rdd = wire_pulling_flow(x, ControlInput{20.0, Vec3(0.1, 0, 0), s.tau_gamma}, Vec5::Zero(), kParams);
  CHECK((rdd - s.rdd).norm() < 1e-9);
  CHECK((rdd.tail<2>() - gdd).norm() < 1e-9);

  const FreeState xf = oracle::random_free_state(rng);
  const ServoLockedFree f = free_flight_servo_locked(xf, 25.0, Vec3(0, 0.05, 0), gdd, Vec8::Zero(), kParams);
  const Vec8 qdd = free_flight_flow(xf, ControlInput{25.0, Vec3(0, 0.05, 0), f.tau_gamma}, Vec8::Zero(), kParams);
  CHECK((qdd - f.qdd).norm() < 1e-9);
}

TEST_CASE("singular configurations raise typed errors") {
  FreeState x;
  x.q(4) = std::numbers::pi / 2;
  CHECK_THROWS_AS(free_flight_terms(x, kParams), Error);
  ArmParams bad = kParams;
  bad.m_b = -5.0;
  bad.m_1 = bad.m_2 = 0.0;
  bad.J_b = Vec3(-1, -1, -1);
  try {
    free_flight_flow(FreeState{}, ControlInput{}, Vec8::Zero(), bad);
    FAIL("expected SingularMass");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::SingularMass);
  }
}
