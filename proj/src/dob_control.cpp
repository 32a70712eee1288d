#include "plugpull/dob_control.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "plugpull/errors.hpp"

namespace plugpull::control {

using dynamics::ArmParams;

namespace {

const Vec3 kEz{0.0, 0.0, 1.0};

Vec6 interleave(const Vec3& a, const Vec3& b) {
  Vec6 v;
  v << a(0), b(0), a(1), b(1), a(2), b(2);
  return v;
}

double sat_scalar(double u, double s) {
  const double a = 0.9 * s;
  const double m = std::abs(u);
  if (m <= a) return u;
  const double w = s - a;
  return std::copysign(a + w * std::tanh((m - a) / w), u);
}

double sat_slope(double u, double s) {
  const double a = 0.9 * s;
  const double m = std::abs(u);
  if (m <= a) return 1.0;
  const double th = std::tanh((m - a) / (s - a));
  return 1.0 - th * th;
}

}  // namespace

Vec6 DobState::q() const { return interleave(q1, q2); }
Vec6 DobState::p() const { return interleave(p1, p2); }

Eigen::Matrix<double, ControllerState::kSize, 1> ControllerState::vec() const {
  Eigen::Matrix<double, kSize, 1> v;
  v << att.q1, att.q2, att.p1, att.p2, pos.q1, pos.q2, pos.p1, pos.p2;
  return v;
}

ControllerState ControllerState::from_vec(const Eigen::Matrix<double, kSize, 1>& v) {
  ControllerState s;
  s.att = {v.segment<3>(0), v.segment<3>(3), v.segment<3>(6), v.segment<3>(9)};
  s.pos = {v.segment<3>(12), v.segment<3>(15), v.segment<3>(18), v.segment<3>(21)};
  return s;
}

Vec3 saturation_pi(const Vec3& u, const Vec3& s_max) {
  return {sat_scalar(u(0), s_max(0)), sat_scalar(u(1), s_max(1)), sat_scalar(u(2), s_max(2))};
}

Vec3 saturation_pi_slope(const Vec3& u, const Vec3& s_max) {
  return {sat_slope(u(0), s_max(0)), sat_slope(u(1), s_max(1)), sat_slope(u(2), s_max(2))};
}

Mat3 lambda_matrix(const Vec3& J_bar, const Vec3& eta) {
  return J_bar.cwiseSqrt().asDiagonal() * math::euler_rate_matrix(math::EulerAngles(eta));
}

Vec3 nominal_attitude_control(const Vec3& eta, const Vec3& eta_dot, const traj::Reference& ref, const Vec3& F_bar,
                              const Mat3& G_bar, const NominalGains& gains) {
  const Vec3 v = ref.eta_d_ddot - gains.att_kd.cwiseProduct(eta_dot - ref.eta_d_dot) -
                 gains.att_kp.cwiseProduct(eta - ref.eta_d) - F_bar;
  return G_bar.partialPivLu().solve(v);
}

Vec3 filter_accel(const Vec3& q1, const Vec3& q2, const Vec3& input, const Vec3& a0, const Vec3& a1, double eps) {
  return (a0 / (eps * eps)).cwiseProduct(input - q1) - (a1 / eps).cwiseProduct(q2);
}

DobOutput dob_output(const DobState& s, const Vec3& eta, const Vec3& F_bar, const Mat3& G_bar, const Mat3& Lambda,
                     const Vec3& tau_b0, const DobParams& p) {
  const Mat3 LG = Lambda * G_bar;
  const Eigen::FullPivLU<Mat3> lu(LG);
  if (!lu.isInvertible()) {
    std::ostringstream os;
    os << "Lambda*G_bar singular at eta = " << eta.transpose();
    throw Error(ErrorCode::NonInvertible, os.str());
  }
  DobOutput o;
  const Vec3 q2dot = filter_accel(s.q1, s.q2, eta, p.a0, p.a1, p.epsilon);
  o.u = s.p1 - Lambda * (q2dot - F_bar);
  o.pi_u = p.enabled ? saturation_pi(o.u, p.s_max) : Vec3::Zero();
  o.tau_b1 = LG * tau_b0;
  o.tau_b2 = o.tau_b1 + o.pi_u;
  o.tau_b = tau_b0 + lu.solve(o.pi_u);
  return o;
}

DobState dob_derivative(const DobState& s, const Vec3& eta, const Vec3& tau_b2, const DobParams& p) {
  DobState d;
  d.q1 = s.q2;
  d.q2 = filter_accel(s.q1, s.q2, eta, p.a0, p.a1, p.epsilon);
  d.p1 = s.p2;
  d.p2 = filter_accel(s.p1, s.p2, tau_b2, p.a0, p.a1, p.epsilon);
  return d;
}

DobState dob_bumpless_init(const Vec3& eta, const Vec3& eta_dot, const Vec3& F_bar, const Mat3& Lambda,
                           const DobParams& p) {
  DobState s;
  s.q2 = eta_dot;
  s.q1 = eta - p.epsilon * p.a1.cwiseQuotient(p.a0).cwiseProduct(eta_dot);
  const Vec3 q2dot = filter_accel(s.q1, s.q2, eta, p.a0, p.a1, p.epsilon);
  s.p1 = Lambda * (q2dot - F_bar);
  s.p2 = Vec3::Zero();
  return s;
}

DobStepResult dob_step(const DobState& s, const Vec3& eta, const Vec3& tau_b2_prev, const Vec3& F_bar,
                       const Mat3& G_bar, const Vec3& J_bar, const Vec3& tau_b0, double dt, const DobParams& p) {
  if (dt > p.epsilon / 10.0 * (1.0 + 1e-12)) {
    std::ostringstream os;
    os << "DOB step " << dt << " exceeds epsilon/10 = " << p.epsilon / 10.0;
    throw Error(ErrorCode::ConfigInvalid, os.str());
  }
  auto add = [](const DobState& a, const DobState& b, double h) {
    return DobState{a.q1 + h * b.q1, a.q2 + h * b.q2, a.p1 + h * b.p1, a.p2 + h * b.p2};
  };
  const DobState k1 = dob_derivative(s, eta, tau_b2_prev, p);
  const DobState k2 = dob_derivative(add(s, k1, 0.5 * dt), eta, tau_b2_prev, p);
  const DobState k3 = dob_derivative(add(s, k2, 0.5 * dt), eta, tau_b2_prev, p);
  const DobState k4 = dob_derivative(add(s, k3, dt), eta, tau_b2_prev, p);
  DobStepResult r;
  r.state = s;
  r.state = add(r.state, k1, dt / 6.0);
  r.state = add(r.state, k2, dt / 3.0);
  r.state = add(r.state, k3, dt / 3.0);
  r.state = add(r.state, k4, dt / 6.0);
  const DobOutput o = dob_output(r.state, eta, F_bar, G_bar, lambda_matrix(J_bar, eta), tau_b0, p);
  r.tau_b = o.tau_b;
  r.u = o.u;
  return r;
}

double thrust_law(double z, double z_dot, double z_d, double z_d_dot, double a_extra, const Vec3& eta,
                  const NominalGains& gains, const ArmParams& nominal, bool* saturated) {
  const double az = gains.pos_kp.z() * (z_d - z) + gains.pos_kd.z() * (z_d_dot - z_dot) + a_extra;
  const double tilt = std::max(std::cos(eta.x()) * std::cos(eta.y()), 0.3);
  const double raw = nominal.total_mass() * (nominal.g + az) / tilt;
  const double T = std::clamp(raw, 0.0, nominal.T_max);
  if (saturated) *saturated = (T != raw);
  return T;
}

namespace {

Vec3 clip_torque(const Vec3& tau, const Vec3& limit) { return tau.cwiseMax(-limit).cwiseMin(limit); }

Vec3 nominal_accel(double thrust, const Vec3& eta, const ArmParams& nominal) {
  const Mat3 R = math::euler_to_rotation(math::EulerAngles(eta));
  return thrust * R * kEz / nominal.total_mass() - nominal.g * kEz;
}

}  // namespace

ControlOutput wp_controller(const dynamics::ConstrainedState& x, const traj::Reference& ref, const Vec2& gamma_dd_est,
                            const ControllerState& s, const ControllerParams& p) {
  const dynamics::FreeState xf = dynamics::embed(x, p.nominal);
  ControlOutput o;
  o.ref = ref;
  const Vec3 eta = x.eta();
  o.u.thrust = thrust_law(xf.q(2), xf.qd(2), ref.p_d.z(), ref.p_d_dot.z(), 0.0, eta, p.gains, p.nominal,
                          &o.thrust_saturated);
  const dynamics::AttitudeModel nom = dynamics::nominal_attitude_model(x, o.u.thrust, gamma_dd_est, p.nominal);
  o.F_bar = nom.F;
  o.G_bar = nom.G;
  o.Lambda = lambda_matrix(p.nominal.J_b, eta);
  o.tau_b0 = nominal_attitude_control(eta, x.eta_dot(), ref, o.F_bar, o.G_bar, p.gains);
  o.dob = dob_output(s.att, eta, o.F_bar, o.G_bar, o.Lambda, o.tau_b0, p.dob);
  o.u.tau_b = clip_torque(o.dob.tau_b, p.nominal.tau_max);
  o.a_nom = nominal_accel(o.u.thrust, eta, p.nominal);
  return o;
}

ControlOutput st_ff_controller(const dynamics::FreeState& x, const traj::Reference& ref, bool attitude_from_reference,
                               const Vec2& gamma_dd_est, const ControllerState& s, const ControllerParams& p) {
  ControlOutput o;
  o.ref = ref;
  const Vec3 eta = x.eta();
  const Vec3 pos = x.position();
  const Vec3 vel = x.velocity();
  const PositionDobParams& pd = p.pos_dob;

  const Vec3 a_pd = p.gains.pos_kp.cwiseProduct(ref.p_d - pos) + p.gains.pos_kd.cwiseProduct(ref.p_d_dot - vel);
  const Vec3 q2dot = filter_accel(s.pos.q1, s.pos.q2, pos, Vec3::Constant(pd.a0), Vec3::Constant(pd.a1), pd.epsilon);
  o.d_hat = p.dob.enabled ? saturation_pi(q2dot - s.pos.p1, Vec3::Constant(pd.d_max)) : Vec3::Zero();
  const Vec3 a_cmd = a_pd - o.d_hat;

  if (!attitude_from_reference) {
    const Vec3 f = p.nominal.total_mass() * (a_cmd + p.nominal.g * kEz);
    const Vec3 fl = math::rot_z(-ref.yaw_d) * f;
    const double lim = p.gains.max_tilt;
    o.ref.eta_d.y() = std::clamp(std::atan2(fl.x(), fl.z()), -lim, lim);
    o.ref.eta_d.x() = std::clamp(std::atan2(-fl.y(), std::hypot(fl.x(), fl.z())), -lim, lim);
    o.ref.eta_d.z() = ref.yaw_d;
    o.ref.eta_d_dot.setZero();
    o.ref.eta_d_ddot.setZero();
  }
  o.u.thrust = thrust_law(pos.z(), vel.z(), ref.p_d.z(), ref.p_d_dot.z(), -o.d_hat.z(), eta, p.gains, p.nominal,
                          &o.thrust_saturated);

  const dynamics::AttitudeModel nom = dynamics::nominal_free_attitude_model(x, o.u.thrust, gamma_dd_est, p.nominal);
  o.F_bar = nom.F;
  o.G_bar = nom.G;
  o.Lambda = lambda_matrix(p.nominal.J_b, eta);
  o.tau_b0 = nominal_attitude_control(eta, x.eta_dot(), o.ref, o.F_bar, o.G_bar, p.gains);
  o.dob = dob_output(s.att, eta, o.F_bar, o.G_bar, o.Lambda, o.tau_b0, p.dob);
  o.u.tau_b = clip_torque(o.dob.tau_b, p.nominal.tau_max);
  o.a_nom = nominal_accel(o.u.thrust, eta, p.nominal);
  return o;
}

ControllerState controller_derivative(const ControllerState& s, const ControlOutput& out, const Vec3& eta,
                                      const Vec3& position, const ControllerParams& p) {
  ControllerState d;
  d.att = dob_derivative(s.att, eta, out.dob.tau_b2, p.dob);
  const PositionDobParams& pd = p.pos_dob;
  const Vec3 a0 = Vec3::Constant(pd.a0), a1 = Vec3::Constant(pd.a1);
  d.pos.q1 = s.pos.q2;
  d.pos.q2 = filter_accel(s.pos.q1, s.pos.q2, position, a0, a1, pd.epsilon);
  d.pos.p1 = s.pos.p2;
  d.pos.p2 = filter_accel(s.pos.p1, s.pos.p2, out.a_nom, a0, a1, pd.epsilon);
  return d;
}

PositionDobState position_dob_init(const Vec3& position, const Vec3& velocity, const PositionDobParams& p) {
  PositionDobState s;
  s.q2 = velocity;
  s.q1 = position - p.epsilon * (p.a1 / p.a0) * velocity;
  s.p1 = Vec3::Zero();
  s.p2 = Vec3::Zero();
  return s;
}

}  // namespace plugpull::control
