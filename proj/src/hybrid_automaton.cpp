#include "plugpull/hybrid_automaton.hpp"

#include <cmath>
#include <sstream>

#include "plugpull/analysis.hpp"
#include "plugpull/errors.hpp"

namespace plugpull::hybrid {

using control::ControllerState;
using control::ControlOutput;
using dynamics::ConstrainedState;
using dynamics::ControlInput;
using dynamics::FreeState;

std::string_view to_string(Termination t) {
  switch (t) {
    case Termination::Completed: return "Completed";
    case Termination::EnvelopeExit: return "EnvelopeExit";
    case Termination::NoSeparation: return "NoSeparation";
    case Termination::GimbalLock: return "GimbalLock";
    case Termination::StoppedAtGuard: return "StoppedAtGuard";
  }
  return "?";
}

bool guard_wp_st(const ConstrainedState& x, const ControlInput& u, const GuardConfig& cfg,
                 const dynamics::ArmParams& p, const Vec8& tau_e_q) {
  const dynamics::EffectorForce f = dynamics::end_effector_force(x, u, p, tau_e_q);
  const double F1 = cfg.quasi_static ? f.quasi_static_x : f.exact.x();
  return F1 >= cfg.F_TH;
}

bool guard_st_ff(const FreeState& x, double t, double td_st, const GuardConfig& cfg) {
  return x.eta().norm() < cfg.delta_eta && t >= td_st;
}

FreeState reset_wp_st(const ConstrainedState& x, const Vec3& jump, const dynamics::ArmParams& p) {
  FreeState f = dynamics::embed(x, p);
  f.qd.head<3>() += jump;
  return f;
}

FreeState reset_st_ff(const FreeState& x) { return x; }

Vec3 sample_jump(Rng& rng, const JumpModel& m) { return rng.in_ball(m.bound); }

ConstrainedState perched_state(const ScenarioConfig& cfg) {
  ConstrainedState x;
  x.r << 0.0, 0.0, cfg.sim.yaw0, cfg.traj.gamma_d;
  x.anchor = cfg.sim.anchor;
  return x;
}

FreeState sample_state(const TraceSample& s) {
  FreeState x;
  x.q = s.q;
  x.qd = s.qd;
  return x;
}

namespace {

using State = Eigen::VectorXd;
constexpr int kCtrl = ControllerState::kSize;

int plant_size(Mode m) { return m == Mode::WP ? 10 : 16; }

struct Eval {
  State deriv;
  ControlOutput out;
  Vec3 F_E = Vec3::Zero();
  Vec2 tau_gamma = Vec2::Zero();
  FreeState xf;  // free-chart kinematics (reconstructed in WP)
  ControllerState ctrl;
};

class Simulator {
 public:
  Simulator(const ScenarioConfig& cfg, const SimOptions& opt)
      : cfg_(cfg), opt_(opt), cp_(cfg.controller_params()), rng_(cfg.sim.seed) {}

  HybridTrace run();

 private:
  Vec2 servo_accel(const Vec2& gamma, const Vec2& gamma_dot) const {
    if (cfg_.sim.servo_tau <= 0.0) return Vec2::Zero();
    const double w = 1.0 / cfg_.sim.servo_tau;
    return w * w * (cfg_.traj.gamma_d - gamma) - 2.0 * w * gamma_dot;
  }

  traj::Reference reference(double t) const {
    switch (mode_) {
      case Mode::WP: return traj::wp_reference(t, cfg_.traj, home_);
      case Mode::ST: return traj::st_reference(t, st_, hold_, cfg_.traj.gamma_d);
      case Mode::FF: return traj::ff_reference(t, home_, cfg_.traj.gamma_d);
    }
    return {};
  }

  Eval evaluate(double t, const State& X) const;
  bool guard(double t, const State& X) const;
  State rk4(double t, const State& X, double h) const {
    const State k1 = evaluate(t, X).deriv;
    const State k2 = evaluate(t + 0.5 * h, X + 0.5 * h * k1).deriv;
    const State k3 = evaluate(t + 0.5 * h, X + 0.5 * h * k2).deriv;
    const State k4 = evaluate(t + h, X + h * k3).deriv;
    return X + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  std::optional<std::string> envelope_violation(const Eval& e) const;
  TraceSample make_sample(double t, const State& X) const;
  State initial_wp_state();
  State enter_st(double t, const FreeState& x);

  const ScenarioConfig& cfg_;
  SimOptions opt_;
  control::ControllerParams cp_;
  Rng rng_;

  Mode mode_ = Mode::WP;
  Vec3 anchor_ = Vec3::Zero();
  traj::Home home_;
  traj::StCoefficients st_;
  Vec3 hold_ = Vec3::Zero();
  double gamma_noise_ = 0.0;
};

Eval Simulator::evaluate(double t, const State& X) const {
  Eval e;
  const int n = plant_size(mode_);
  e.ctrl = ControllerState::from_vec(X.segment<kCtrl>(n));
  const traj::Reference ref = reference(t);
  const Vec8 tau_e = cfg_.disturbance(t, mode_);
  const bool nominal_plant = cfg_.sim.plant_model == PlantModel::Nominal;
  const auto& actual = nominal_plant ? cfg_.plant.nominal : cfg_.plant.actual;
  e.deriv.resize(X.size());

  if (mode_ == Mode::WP) {
    ConstrainedState x;
    x.r = X.segment<5>(0);
    x.rd = X.segment<5>(5);
    x.anchor = anchor_;
    const Vec2 gdd = servo_accel(x.gamma(), x.gamma_dot());
    e.out = control::wp_controller(x, ref, gdd + Vec2::Constant(gamma_noise_), e.ctrl, cp_);
    const dynamics::WireTerms w = dynamics::wire_pulling_terms(x, actual);
    const Vec5 tau_e_r = w.map.S.transpose() * tau_e;
    Vec5 rdd;
    if (!nominal_plant) {
      const auto sl = dynamics::wire_pulling_servo_locked(w, e.out.u.thrust, e.out.u.tau_b, gdd, tau_e_r);
      rdd = sl.rdd;
      e.tau_gamma = sl.tau_gamma;
    } else {
      const auto nom = dynamics::nominal_attitude_model(x, e.out.u.thrust, gdd, cfg_.plant.nominal);
      const Mat3 Q = math::euler_rate_matrix(math::EulerAngles(x.eta()));
      const Vec3 body_dist = Q.transpose().partialPivLu().solve(tau_e_r.head<3>());
      rdd << nom.F + nom.G * e.out.u.tau_b + cfg_.plant.nominal.J_b.cwiseInverse().cwiseProduct(body_dist), gdd;
      const ControlInput u0{e.out.u.thrust, e.out.u.tau_b, Vec2::Zero()};
      const Vec5 res = w.terms.M * rdd + w.terms.C + w.terms.K - w.terms.Ju.transpose() * u0.vec() - tau_e_r;
      e.tau_gamma = res.tail<2>();
    }
    e.out.u.tau_gamma = e.tau_gamma;
    e.F_E = dynamics::reaction_from(w, rdd, e.out.u, tau_e);
    e.xf = w.map.embedded;
    e.deriv.segment<5>(0) = x.rd;
    e.deriv.segment<5>(5) = rdd;
  } else {
    FreeState x;
    x.q = X.segment<8>(0);
    x.qd = X.segment<8>(8);
    const Vec2 gdd = servo_accel(x.gamma(), x.gamma_dot());
    e.out = control::st_ff_controller(x, ref, mode_ == Mode::ST, gdd + Vec2::Constant(gamma_noise_), e.ctrl, cp_);
    Vec8 qdd;
    if (!nominal_plant) {
      const auto sl =
          dynamics::free_flight_servo_locked(x, e.out.u.thrust, e.out.u.tau_b, gdd, tau_e, cfg_.plant.actual);
      qdd = sl.qdd;
      e.tau_gamma = sl.tau_gamma;
    } else {
      const auto& nomp = cfg_.plant.nominal;
      const auto nom = dynamics::nominal_free_attitude_model(x, e.out.u.thrust, gdd, nomp);
      const Mat3 Q = math::euler_rate_matrix(math::EulerAngles(x.eta()));
      const Vec3 body_dist = Q.transpose().partialPivLu().solve(tau_e.segment<3>(3));
      const Mat3 R = math::euler_to_rotation(math::EulerAngles(x.eta()));
      qdd << e.out.u.thrust * R.col(2) / nomp.total_mass() - Vec3(0, 0, nomp.g) + tau_e.head<3>() / nomp.total_mass(),
          nom.F + nom.G * e.out.u.tau_b + nomp.J_b.cwiseInverse().cwiseProduct(body_dist), gdd;
      const auto t8 = dynamics::free_flight_terms(x, nomp);
      const ControlInput u0{e.out.u.thrust, e.out.u.tau_b, Vec2::Zero()};
      const Vec8 res = t8.M * qdd + t8.C + t8.K - t8.Ju.transpose() * u0.vec() - tau_e;
      e.tau_gamma = res.tail<2>();
    }
    e.out.u.tau_gamma = e.tau_gamma;
    e.xf = x;
    e.deriv.segment<8>(0) = x.qd;
    e.deriv.segment<8>(8) = qdd;
  }
  const ControllerState cd =
      control::controller_derivative(e.ctrl, e.out, e.xf.eta(), e.xf.position(), cp_);
  e.deriv.segment<kCtrl>(n) = cd.vec();
  return e;
}

bool Simulator::guard(double t, const State& X) const {
  if (mode_ == Mode::WP) {
    if (!opt_.wp_guard_enabled) return false;
    if (cfg_.sim.force_separation_at >= 0.0) return t >= cfg_.sim.force_separation_at;
    const Eval e = evaluate(t, X);
    const double F1 = cfg_.guard.quasi_static ? -e.out.u.thrust * std::sin(e.xf.eta().y()) : e.F_E.x();
    return F1 >= cfg_.guard.F_TH;
  }
  if (mode_ == Mode::ST) {
    FreeState x;
    x.q = X.segment<8>(0);
    return guard_st_ff(x, t, st_.td, cfg_.guard);
  }
  return false;
}

std::optional<std::string> Simulator::envelope_violation(const Eval& e) const {
  const auto& env = cfg_.envelope;
  const Vec3 eta = e.xf.eta();
  std::ostringstream os;
  if (std::abs(eta.x()) > env.max_tilt || std::abs(eta.y()) > env.max_tilt) {
    os << "tilt (" << eta.x() << ", " << eta.y() << ") rad beyond " << env.max_tilt;
    return os.str();
  }
  const Vec3 dp = e.xf.position() - home_.position;
  if ((dp.cwiseAbs().array() > env.box_half.array()).any()) {
    os << "position offset " << dp.transpose() << " m outside the box";
    return os.str();
  }
  if (e.xf.velocity().norm() > env.max_speed) {
    os << "speed " << e.xf.velocity().norm() << " m/s above " << env.max_speed;
    return os.str();
  }
  if (e.xf.eta_dot().norm() > env.max_rate) {
    os << "Euler rate " << e.xf.eta_dot().norm() << " rad/s above " << env.max_rate;
    return os.str();
  }
  return std::nullopt;
}

TraceSample Simulator::make_sample(double t, const State& X) const {
  const Eval e = evaluate(t, X);
  TraceSample s;
  s.t = t;
  s.mode = mode_;
  s.q = e.xf.q;
  s.qd = e.xf.qd;
  s.thrust = e.out.u.thrust;
  s.tau_b = e.out.u.tau_b;
  s.tau_gamma = e.tau_gamma;
  s.F_E = e.F_E;
  s.eta_d = e.out.ref.eta_d;
  s.p_d = e.out.ref.p_d;
  s.u_eta = e.out.dob.u;
  s.pi_u = e.out.dob.pi_u;
  s.tau_b0 = e.out.tau_b0;
  const analysis::FastVars fv = analysis::fast_variables(e.ctrl.att, e.xf.eta(), e.xf.eta_dot(), e.out.Lambda, cfg_.dob);
  s.xi = fv.xi;
  s.zeta = fv.zeta;
  const Vec3 eta_dd = e.deriv.segment<3>(mode_ == Mode::WP ? 5 : 11);
  const Vec3 z1 = analysis::zeta1_star(e.out.dob.tau_b2, e.out.Lambda, eta_dd);
  for (int i = 0; i < 3; ++i) s.zeta_star(2 * i) = z1(i);
  return s;
}

State Simulator::initial_wp_state() {
  const ConstrainedState x = perched_state(cfg_);
  anchor_ = x.anchor;
  const FreeState xf = dynamics::embed(x, cfg_.plant.actual);
  home_ = {xf.position(), x.eta().z()};
  mode_ = Mode::WP;

  State X(10 + kCtrl);
  X.segment<5>(0) = x.r;
  X.segment<5>(5) = x.rd;
  ControllerState c;
  X.segment<kCtrl>(10) = c.vec();
  // Nominal model quantities at the initial state do not depend on the filters.
  const Eval e0 = evaluate(cfg_.traj.t0_wp, X);
  const auto& dp = cfg_.dob;
  c.att = control::dob_bumpless_init(x.eta(), x.eta_dot(), e0.out.F_bar, e0.out.Lambda, dp);
  if (opt_.dob_init == DobInit::QuasiSteady) {
    const Vec2 gdd = servo_accel(x.gamma(), x.gamma_dot());
    const Vec8 tau_e = cfg_.disturbance(cfg_.traj.t0_wp, Mode::WP);
    const auto w = dynamics::wire_pulling_terms(x, cfg_.plant.actual);
    const auto act = dynamics::attitude_submodel(x, e0.out.u.thrust, gdd, w.map.S.transpose() * tau_e, cfg_.plant.actual);
    const Vec3 ustar = analysis::quasi_steady_ustar(e0.out.Lambda, e0.out.F_bar, e0.out.G_bar, act.F, act.G,
                                                    e0.out.tau_b0, Vec3::Zero());
    const Vec3 q2dot = control::filter_accel(c.att.q1, c.att.q2, x.eta(), dp.a0, dp.a1, dp.epsilon);
    c.att.p1 = ustar + e0.out.Lambda * (q2dot - e0.out.F_bar);
  }
  if (opt_.xi_perturbation.norm() > 0.0) {
    // Shift xi_{i,1} while keeping zeta fixed.
    const Vec3 q2dot_before = control::filter_accel(c.att.q1, c.att.q2, x.eta(), dp.a0, dp.a1, dp.epsilon);
    c.att.q1 += dp.epsilon * opt_.xi_perturbation;
    const Vec3 q2dot_after = control::filter_accel(c.att.q1, c.att.q2, x.eta(), dp.a0, dp.a1, dp.epsilon);
    const Vec3 dq2dot = q2dot_after - q2dot_before;
    const Vec3 dq2ddot = -(dp.a1 / dp.epsilon).cwiseProduct(dq2dot);
    c.att.p1 += e0.out.Lambda * dq2dot;
    c.att.p2 += e0.out.Lambda * dq2ddot;
  }
  X.segment<kCtrl>(10) = c.vec();
  return X;
}

State Simulator::enter_st(double t, const FreeState& x) {
  mode_ = Mode::ST;
  State X(16 + kCtrl);
  X.segment<8>(0) = x.q;
  X.segment<8>(8) = x.qd;
  ControllerState c;
  c.pos = control::position_dob_init(x.position(), x.velocity(), cfg_.pos_dob);
  X.segment<kCtrl>(16) = c.vec();
  const Eval e0 = evaluate(t, X);
  c.att = control::dob_bumpless_init(x.eta(), x.eta_dot(), e0.out.F_bar, e0.out.Lambda, cfg_.dob);
  X.segment<kCtrl>(16) = c.vec();
  return X;
}

HybridTrace Simulator::run() {
  HybridTrace tr;
  const double dt = cfg_.integrator.dt;
  const int dec = opt_.decimation.value_or(cfg_.integrator.decimation);
  const double tol = cfg_.integrator.event_tolerance;

  double t0 = cfg_.traj.t0_wp;
  State X;
  if (opt_.start) {
    const StartPoint& s = *opt_.start;
    t0 = s.t;
    home_ = s.home;
    st_ = s.st;
    hold_ = s.hold;
    if (s.mode == Mode::WP) throw Error(ErrorCode::ConfigInvalid, "custom start in WP is not supported");
    X = enter_st(t0, s.x);
    mode_ = s.mode;
  } else {
    X = initial_wp_state();
  }
  tr.home = home_;
  const double t_stop = opt_.t_stop.value_or(cfg_.integrator.t_end);

  double t = t0;
  long k = 0;
  try {
    tr.samples.push_back(make_sample(t, X));
    while (t < t_stop - 1e-12) {
      const double t_next = std::min(t0 + static_cast<double>(k + 1) * dt, t_stop);
      const double h = t_next - t;
      if (h <= 1e-12) {
        ++k;
        continue;
      }
      gamma_noise_ = cfg_.sim.gamma_dd_noise > 0.0 ? cfg_.sim.gamma_dd_noise * rng_.normal() : 0.0;
      State Xn = rk4(t, X, h);
      bool stepped_full = true;
      if (guard(t_next, Xn)) {
        double lo = 0.0, hi = h;
        while (hi - lo > tol) {
          const double mid = 0.5 * (lo + hi);
          if (guard(t + mid, rk4(t, X, mid))) hi = mid;
          else lo = mid;
        }
        const double t_ev = t + hi;
        const State Xe = hi == h ? Xn : rk4(t, X, hi);
        tr.samples.push_back(make_sample(t_ev, Xe));
        EventRecord ev;
        ev.t = t_ev;
        ev.from = mode_;
        if (mode_ == Mode::WP) {
          ConstrainedState xc;
          xc.r = Xe.segment<5>(0);
          xc.rd = Xe.segment<5>(5);
          xc.anchor = anchor_;
          ev.to = Mode::ST;
          ev.pre = dynamics::embed(xc, cfg_.plant.actual);
          ev.jump = opt_.jump_override.value_or(sample_jump(rng_, cfg_.jump));
          ev.post = reset_wp_st(xc, ev.jump, cfg_.plant.actual);
          st_ = traj::solve_st_coefficients(ev.post.eta(), ev.post.eta_dot(), t_ev, t_ev + cfg_.traj.st_window);
          hold_ = ev.post.position();
          X = enter_st(t_ev, ev.post);
        } else {
          FreeState xq;
          xq.q = Xe.segment<8>(0);
          xq.qd = Xe.segment<8>(8);
          ev.to = Mode::FF;
          ev.pre = xq;
          ev.post = reset_st_ff(xq);
          mode_ = Mode::FF;
          X = Xe;
        }
        tr.events.push_back(ev);
        t = t_ev;
        tr.samples.push_back(make_sample(t, X));
        if (ev.to == Mode::FF && opt_.stop_at_st_ff) {
          tr.status = Termination::StoppedAtGuard;
          break;
        }
        stepped_full = hi == h;
        if (!stepped_full) continue;
      } else {
        X = Xn;
        t = t_next;
      }
      ++k;
      const Eval e = evaluate(t, X);
      if (auto v = envelope_violation(e)) {
        tr.samples.push_back(make_sample(t, X));
        tr.status = Termination::EnvelopeExit;
        tr.message = *v;
        break;
      }
      if (mode_ == Mode::WP && opt_.wp_guard_enabled && t >= cfg_.traj.td_wp) {
        tr.samples.push_back(make_sample(t, X));
        tr.status = Termination::NoSeparation;
        tr.message = "pulling force never reached F_TH during the ramp";
        break;
      }
      if (k % dec == 0) tr.samples.push_back(make_sample(t, X));
    }
  } catch (const Error& err) {
    if (err.code() != ErrorCode::GimbalLock) throw;
    tr.status = Termination::GimbalLock;
    tr.message = err.what();
  }
  if (tr.status == Termination::Completed && opt_.stop_at_st_ff) {
    tr.status = Termination::Completed;
  }
  tr.t_final = t;
  return tr;
}

}  // namespace

HybridTrace simulate(const ScenarioConfig& cfg, const SimOptions& opt) {
  Simulator sim(cfg, opt);
  return sim.run();
}

}  // namespace plugpull::hybrid
