#include "plugpull/arm_dynamics.hpp"

#include <cmath>
#include <sstream>

#include "plugpull/errors.hpp"

namespace plugpull::dynamics {

using math::EulerAngles;
using math::skew;

namespace {

const Vec3 kEy{0.0, 1.0, 0.0};
const Vec3 kEz{0.0, 0.0, 1.0};

// Unit direction of a link rotated by `a` about y_B, starting from -z_B.
Vec3 link_dir(double a) { return {-std::sin(a), 0.0, -std::cos(a)}; }
Vec3 link_dir_da(double a) { return {-std::cos(a), 0.0, std::sin(a)}; }

struct Element {
  double mass;
  Vec3 inertia;  // principal moments, element frame
  ElementGeometry geo;
};

std::array<Element, 4> elements(const ArmGeometry& a, const ArmParams& p) {
  return {Element{p.m_b, p.J_b, ElementGeometry{}},
          Element{p.m_1, p.J_1, a.link1},
          Element{p.m_2, p.J_2, a.link2},
          Element{0.0, p.J_E, a.effector}};
}

struct ElementJacobians {
  Mat3x8 Jv;
  Mat3x8 Jw;
  Vec3 a0;      // inertial CoM acceleration at qdd = 0
  Vec3 omega;   // element-frame angular velocity
  Vec3 wdot0;   // element-frame angular acceleration at qdd = 0
};

struct Kinematic {
  Mat3 R;
  Mat3 Q;
  Vec3 omega;  // body rate
  Vec3 Qd_etad;
};

Kinematic body_kinematics(const Vec3& eta, const Vec3& eta_dot) {
  const EulerAngles e(eta);
  Kinematic k;
  k.R = math::euler_to_rotation(e);
  k.Q = math::euler_rate_matrix(e);
  k.omega = k.Q * eta_dot;
  k.Qd_etad = math::euler_rate_matrix_dot(e, eta_dot) * eta_dot;
  return k;
}

ElementJacobians element_jacobians(const Kinematic& k, const ElementGeometry& g, const Vec2& gamma_dot) {
  ElementJacobians j;
  const Vec3& s = g.offset;
  const Vec3 s_dot = g.offset_jac * gamma_dot;
  j.Jv.setZero();
  j.Jv.block<3, 3>(0, 0).setIdentity();
  j.Jv.block<3, 3>(0, 3) = -k.R * skew(s) * k.Q;
  j.Jv.block<3, 2>(0, 6) = k.R * g.offset_jac;
  j.a0 = k.R * (k.omega.cross(k.omega.cross(s)) + 2.0 * k.omega.cross(s_dot) + g.offset_acc + k.Qd_etad.cross(s));

  const Mat3 Rt = math::rot_y(g.angle).transpose();
  const double angle_rate = g.angle_jac.dot(gamma_dot);
  j.Jw.setZero();
  j.Jw.block<3, 3>(0, 3) = Rt * k.Q;
  j.Jw.block<3, 2>(0, 6) = Rt * kEy * g.angle_jac.transpose();
  j.omega = Rt * (k.omega + kEy * angle_rate);
  j.wdot0 = -(kEy * angle_rate).cross(Rt * k.omega) + Rt * k.Qd_etad;
  return j;
}

void check_state(const Vec3& eta) { math::check_gimbal(eta.y()); }

template <int N>
Eigen::Matrix<double, N, 1> solve_spd(const Eigen::Matrix<double, N, N>& M, const Eigen::Matrix<double, N, 1>& b,
                                      const char* what) {
  Eigen::LLT<Eigen::Matrix<double, N, N>> llt(M);
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::SingularMass, std::string(what) + " is not positive definite");
  return llt.solve(b);
}

}  // namespace

PlantParams PlantParams::defaults() {
  PlantParams pp;
  pp.nominal.J_b = 0.8 * pp.actual.J_b;
  return pp;
}

ArmGeometry arm_geometry(const Vec2& gamma, const Vec2& gamma_dot, const ArmParams& p) {
  const double a1 = gamma(0);
  const double a2 = gamma(0) + gamma(1);
  const double w1 = gamma_dot(0);
  const double w2 = gamma_dot(0) + gamma_dot(1);
  const Vec3 j1{0.0, 0.0, -p.mount_depth};
  const Vec3 d1 = link_dir(a1), d2 = link_dir(a2);
  const Vec3 t1 = link_dir_da(a1), t2 = link_dir_da(a2);

  // Point j1 + L1 dir(a1) + L2 dir(a2) with (L1, L2) chosen per element.
  auto point = [&](double L1, double L2) {
    ElementGeometry g;
    g.offset = j1 + L1 * d1 + L2 * d2;
    g.offset_jac.col(0) = L1 * t1 + L2 * t2;
    g.offset_jac.col(1) = L2 * t2;
    g.offset_acc = -L1 * d1 * w1 * w1 - L2 * d2 * w2 * w2;
    return g;
  };

  ArmGeometry a;
  a.link1 = point(p.c_1, 0.0);
  a.link1.angle = a1;
  a.link1.angle_jac = Vec2(1.0, 0.0);
  a.link2 = point(p.l_1, p.c_2);
  a.link2.angle = a2;
  a.link2.angle_jac = Vec2(1.0, 1.0);
  a.effector = point(p.l_1, p.l_2);
  a.effector.angle = a2;
  a.effector.angle_jac = Vec2(1.0, 1.0);
  return a;
}

FramePoses link_kinematics(const FreeState& x, const ArmParams& p) {
  check_state(x.eta());
  const Kinematic k = body_kinematics(x.eta(), x.eta_dot());
  const ArmGeometry a = arm_geometry(x.gamma(), x.gamma_dot(), p);
  const Vec3 pb = x.position(), vb = x.velocity();
  const Vec2 gd = x.gamma_dot();

  FramePoses f;
  f.R_IB = k.R;
  f.R_B1 = math::rot_y(a.link1.angle);
  f.R_B2 = math::rot_y(a.link2.angle);
  f.R_BE = f.R_B2;
  f.p_IB = pb;
  f.v_IB = vb;
  auto place = [&](const ElementGeometry& g, Vec3& pos, Vec3& vel) {
    pos = pb + k.R * g.offset;
    vel = vb + k.R * (k.omega.cross(g.offset) + g.offset_jac * gd);
  };
  place(a.link1, f.p_I1, f.v_I1);
  place(a.link2, f.p_I2, f.v_I2);
  place(a.effector, f.p_IE, f.v_IE);
  f.omega_B = k.omega;
  f.omega_1 = f.R_B1.transpose() * (k.omega + kEy * gd(0));
  f.omega_2 = f.R_B2.transpose() * (k.omega + kEy * (gd(0) + gd(1)));
  f.omega_E = f.omega_2;
  return f;
}

FramePoses link_kinematics(const ConstrainedState& x, const ArmParams& p) {
  return link_kinematics(embed(x, p), p);
}

Mat3x8 effector_jacobian(const FreeState& x, const ArmParams& p) {
  check_state(x.eta());
  const Kinematic k = body_kinematics(x.eta(), x.eta_dot());
  const ArmGeometry a = arm_geometry(x.gamma(), x.gamma_dot(), p);
  return element_jacobians(k, a.effector, x.gamma_dot()).Jv;
}

FreeState embed(const ConstrainedState& x, const ArmParams& p) {
  check_state(x.eta());
  const Kinematic k = body_kinematics(x.eta(), x.eta_dot());
  const ArmGeometry a = arm_geometry(x.gamma(), x.gamma_dot(), p);
  const Vec3& s = a.effector.offset;
  FreeState f;
  f.q << x.anchor - k.R * s, x.r;
  const Vec3 v = -k.R * (k.omega.cross(s) + a.effector.offset_jac * x.gamma_dot());
  f.qd << v, x.rd;
  return f;
}

Mat6x8 input_jacobian(const Vec3& eta) {
  const EulerAngles e(eta);
  const Mat3 R = math::euler_to_rotation(e);
  Mat6x8 J = Mat6x8::Zero();
  J.block<1, 3>(0, 0) = (R * kEz).transpose();
  J.block<3, 3>(1, 3) = math::euler_rate_matrix(e);
  J.block<2, 2>(4, 6).setIdentity();
  return J;
}

ELTerms<8> free_flight_terms(const FreeState& x, const ArmParams& p) {
  check_state(x.eta());
  const Kinematic k = body_kinematics(x.eta(), x.eta_dot());
  const ArmGeometry a = arm_geometry(x.gamma(), x.gamma_dot(), p);
  const Vec2 gd = x.gamma_dot();

  ELTerms<8> t;
  t.M.setZero();
  t.C.setZero();
  t.K.setZero();
  for (const Element& el : elements(a, p)) {
    const ElementJacobians j = element_jacobians(k, el.geo, gd);
    const Mat3 I = el.inertia.asDiagonal();
    t.M += el.mass * j.Jv.transpose() * j.Jv + j.Jw.transpose() * I * j.Jw;
    t.C += el.mass * j.Jv.transpose() * j.a0 + j.Jw.transpose() * (I * j.wdot0 + j.omega.cross(I * j.omega));
    t.K += el.mass * p.g * j.Jv.transpose() * kEz;
  }
  t.M = 0.5 * (t.M + t.M.transpose());
  t.Ju = input_jacobian(x.eta());
  return t;
}

double mechanical_energy(const FreeState& x, const ArmParams& p) {
  const FramePoses f = link_kinematics(x, p);
  const ELTerms<8> t = free_flight_terms(x, p);
  const double kinetic = 0.5 * x.qd.dot(t.M * x.qd);
  const double potential = p.g * (p.m_b * f.p_IB.z() + p.m_1 * f.p_I1.z() + p.m_2 * f.p_I2.z());
  return kinetic + potential;
}

Vec8 free_flight_flow(const FreeState& x, const ControlInput& u, const Vec8& tau_e, const ArmParams& p) {
  const ELTerms<8> t = free_flight_terms(x, p);
  return solve_spd<8>(t.M, -t.C - t.K + t.Ju.transpose() * u.vec() + tau_e, "M_q");
}

ConstraintMap constraint_map(const ConstrainedState& x, const ArmParams& p) {
  check_state(x.eta());
  const Kinematic k = body_kinematics(x.eta(), x.eta_dot());
  const ArmGeometry a = arm_geometry(x.gamma(), x.gamma_dot(), p);
  const ElementJacobians je = element_jacobians(k, a.effector, x.gamma_dot());

  ConstraintMap m;
  m.embedded = embed(x, p);
  m.S.setZero();
  m.S.block<3, 5>(0, 0) = -je.Jv.block<3, 5>(0, 3);
  m.S.block<5, 5>(3, 0).setIdentity();
  m.bias.setZero();
  m.bias.head<3>() = -je.a0;
  return m;
}

WireTerms wire_pulling_terms(const ConstrainedState& x, const ArmParams& p) {
  WireTerms w;
  w.map = constraint_map(x, p);
  w.free = free_flight_terms(w.map.embedded, p);
  const Mat8x5& S = w.map.S;
  w.terms.M = S.transpose() * w.free.M * S;
  w.terms.M = 0.5 * (w.terms.M + w.terms.M.transpose());
  w.terms.C = S.transpose() * (w.free.M * w.map.bias + w.free.C);
  w.terms.K = S.transpose() * w.free.K;
  w.terms.Ju = w.free.Ju * S;
  return w;
}

Vec5 wire_pulling_flow(const ConstrainedState& x, const ControlInput& u, const Vec5& tau_e_r, const ArmParams& p) {
  const WireTerms w = wire_pulling_terms(x, p);
  const ELTerms<5>& t = w.terms;
  return solve_spd<5>(t.M, -t.C - t.K + t.Ju.transpose() * u.vec() + tau_e_r, "M_r");
}

namespace {

// eta rows of an N-dof model with the gamma acceleration prescribed; the
// remaining coordinates other than eta are eliminated by a Schur complement.
// Coordinate layout: [other (n_o); eta (3); gamma (2)].
template <int N>
AttitudeModel reduce_to_attitude(const ELTerms<N>& t, const Vec3& eta, double thrust, const Vec2& gamma_dd,
                                 const Eigen::Matrix<double, N, 1>& tau_e) {
  constexpr int no = N - 5;
  const Mat3 Q = math::euler_rate_matrix(EulerAngles(eta));
  Eigen::Matrix<double, 6, 1> u0;
  u0 << thrust, 0, 0, 0, 0, 0;
  // Everything except the tau_b contribution and the gamma_dd inertia.
  Eigen::Matrix<double, N, 1> h = -t.C - t.K + t.Ju.transpose() * u0 + tau_e;
  h -= t.M.template block<N, 2>(0, no + 3) * gamma_dd;

  Mat3 Meta = t.M.template block<3, 3>(no, no);
  Vec3 heta = h.template segment<3>(no);
  if constexpr (no > 0) {
    const auto Moo = t.M.template block<no, no>(0, 0);
    const auto Moe = t.M.template block<no, 3>(0, no);
    const Eigen::Matrix<double, no, no> Moo_inv = Moo.inverse();
    Meta -= Moe.transpose() * Moo_inv * Moe;
    heta -= Moe.transpose() * Moo_inv * h.template head<no>();
  }
  Eigen::LLT<Mat3> llt(Meta);
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::SingularMass, "attitude inertia block");
  AttitudeModel m;
  m.F = llt.solve(heta);
  m.G = llt.solve(Q.transpose());
  return m;
}

}  // namespace

AttitudeModel attitude_submodel(const ConstrainedState& x, double thrust, const Vec2& gamma_dd, const Vec5& tau_e_r,
                                const ArmParams& p) {
  const WireTerms w = wire_pulling_terms(x, p);
  return reduce_to_attitude<5>(w.terms, x.eta(), thrust, gamma_dd, tau_e_r);
}

AttitudeModel nominal_attitude_model(const ConstrainedState& x, double thrust, const Vec2& gamma_dd_est,
                                     const ArmParams& nominal) {
  AttitudeModel m = attitude_submodel(x, thrust, gamma_dd_est, Vec5::Zero(), nominal);
  m.G = nominal.J_b.cwiseInverse().asDiagonal() * math::euler_rate_matrix(EulerAngles(x.eta())).transpose();
  return m;
}

AttitudeModel free_attitude_submodel(const FreeState& x, double thrust, const Vec2& gamma_dd, const Vec8& tau_e,
                                     const ArmParams& p) {
  return reduce_to_attitude<8>(free_flight_terms(x, p), x.eta(), thrust, gamma_dd, tau_e);
}

AttitudeModel nominal_free_attitude_model(const FreeState& x, double thrust, const Vec2& gamma_dd_est,
                                          const ArmParams& nominal) {
  AttitudeModel m = free_attitude_submodel(x, thrust, gamma_dd_est, Vec8::Zero(), nominal);
  m.G = nominal.J_b.cwiseInverse().asDiagonal() * math::euler_rate_matrix(EulerAngles(x.eta())).transpose();
  return m;
}

namespace {

// Solve M a = rhs with a_tail (last two entries) prescribed; returns a and the
// extra generalized force needed on the last two rows.
template <int N>
std::pair<Eigen::Matrix<double, N, 1>, Vec2> solve_locked(const Eigen::Matrix<double, N, N>& M,
                                                         const Eigen::Matrix<double, N, 1>& rhs, const Vec2& tail) {
  constexpr int nf = N - 2;
  const auto Mff = M.template block<nf, nf>(0, 0);
  Eigen::Matrix<double, nf, 1> b = rhs.template head<nf>() - M.template block<nf, 2>(0, nf) * tail;
  Eigen::LLT<Eigen::Matrix<double, nf, nf>> llt(Mff);
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::SingularMass, "servo-locked block");
  Eigen::Matrix<double, N, 1> a;
  a.template head<nf>() = llt.solve(b);
  a.template tail<2>() = tail;
  const Vec2 extra = M.template block<2, N>(nf, 0) * a - rhs.template tail<2>();
  return {a, extra};
}

}  // namespace

ServoLockedFree free_flight_servo_locked(const FreeState& x, double thrust, const Vec3& tau_b, const Vec2& gamma_dd,
                                         const Vec8& tau_e, const ArmParams& p) {
  const ELTerms<8> t = free_flight_terms(x, p);
  const ControlInput u{thrust, tau_b, Vec2::Zero()};
  const Vec8 rhs = -t.C - t.K + t.Ju.transpose() * u.vec() + tau_e;
  auto [a, extra] = solve_locked<8>(t.M, rhs, gamma_dd);
  return {a, extra};
}

ServoLockedWire wire_pulling_servo_locked(const WireTerms& w, double thrust, const Vec3& tau_b, const Vec2& gamma_dd,
                                          const Vec5& tau_e_r) {
  const ELTerms<5>& t = w.terms;
  const ControlInput u{thrust, tau_b, Vec2::Zero()};
  const Vec5 rhs = -t.C - t.K + t.Ju.transpose() * u.vec() + tau_e_r;
  auto [a, extra] = solve_locked<5>(t.M, rhs, gamma_dd);
  return {a, extra};
}

Vec3 reaction_from(const WireTerms& w, const Vec5& rdd, const ControlInput& u, const Vec8& tau_e_q) {
  const Vec8 qdd = w.map.S * rdd + w.map.bias;
  const Vec8 residual = w.free.M * qdd + w.free.C + w.free.K - w.free.Ju.transpose() * u.vec() - tau_e_q;
  return residual.head<3>();
}

EffectorForce end_effector_force(const ConstrainedState& x, const ControlInput& u, const ArmParams& p,
                                 const Vec8& tau_e_q) {
  const WireTerms w = wire_pulling_terms(x, p);
  const ELTerms<5>& t = w.terms;
  const Vec5 tau_e_r = w.map.S.transpose() * tau_e_q;
  const Vec5 rdd = solve_spd<5>(t.M, -t.C - t.K + t.Ju.transpose() * u.vec() + tau_e_r, "M_r");
  EffectorForce f;
  f.exact = reaction_from(w, rdd, u, tau_e_q);
  f.quasi_static_x = -u.thrust * std::sin(x.eta().y());
  return f;
}

double min_eigenvalue(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

}  // namespace plugpull::dynamics
