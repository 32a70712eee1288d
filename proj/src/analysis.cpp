#include "plugpull/analysis.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <numeric>
#include <sstream>
#include <thread>

#include "plugpull/errors.hpp"

namespace plugpull::analysis {

using control::DobParams;
using control::DobState;
using dynamics::ConstrainedState;
using dynamics::ControlInput;
using dynamics::FreeState;

namespace {

constexpr double kIdentityFraction = 0.9;  // Pi is the identity for |u_i| <= 0.9 s_i

bool inside_identity(const Vec3& u, const Vec3& s_max) {
  return (u.cwiseAbs().array() <= kIdentityFraction * s_max.array()).all();
}

Vec3 q2_accel(const DobState& s, const Vec3& eta, const DobParams& p) {
  return control::filter_accel(s.q1, s.q2, eta, p.a0, p.a1, p.epsilon);
}

Vec3 q2_jerk(const DobState& s, const Vec3& eta_dot, const Vec3& q2dot, const DobParams& p) {
  return control::filter_accel(s.q2, q2dot, eta_dot, p.a0, p.a1, p.epsilon);
}

ConstrainedState pinned_from(const FreeState& x, const Vec3& anchor) {
  ConstrainedState c;
  c.r = x.q.tail<5>();
  c.rd = x.qd.tail<5>();
  c.anchor = anchor;
  return c;
}

double spectral_norm(const Mat3& m) {
  return Eigen::JacobiSVD<Mat3>(m).singularValues()(0);
}

}  // namespace

// ---- fast variables -----------------------------------------------------------

FastVars fast_variables(const DobState& s, const Vec3& eta, const Vec3& eta_dot, const Mat3& Lambda,
                        const DobParams& p) {
  const double e = p.epsilon;
  const Vec3 xi1 = s.q1 / e + p.a1.cwiseQuotient(p.a0).cwiseProduct(s.q2) - eta / e;
  const Vec3 xi2 = s.q2 - eta_dot;
  const Vec3 q2dot = q2_accel(s, eta, p);
  const Vec3 q2ddot = q2_jerk(s, eta_dot, q2dot, p);
  const Vec3 z1 = s.p1 - Lambda * q2dot;
  const Vec3 z2 = e * (s.p2 - Lambda * q2ddot);
  FastVars v;
  for (int i = 0; i < 3; ++i) {
    v.xi(2 * i) = xi1(i);
    v.xi(2 * i + 1) = xi2(i);
    v.zeta(2 * i) = z1(i);
    v.zeta(2 * i + 1) = z2(i);
  }
  return v;
}

DobState dob_state_from_fast(const FastVars& v, const Vec3& eta, const Vec3& eta_dot, const Mat3& Lambda,
                             const DobParams& p) {
  const double e = p.epsilon;
  Vec3 xi1, xi2, z1, z2;
  for (int i = 0; i < 3; ++i) {
    xi1(i) = v.xi(2 * i);
    xi2(i) = v.xi(2 * i + 1);
    z1(i) = v.zeta(2 * i);
    z2(i) = v.zeta(2 * i + 1);
  }
  DobState s;
  s.q2 = xi2 + eta_dot;
  s.q1 = e * (xi1 - p.a1.cwiseQuotient(p.a0).cwiseProduct(s.q2)) + eta;
  const Vec3 q2dot = q2_accel(s, eta, p);
  const Vec3 q2ddot = q2_jerk(s, eta_dot, q2dot, p);
  s.p1 = z1 + Lambda * q2dot;
  s.p2 = z2 / e + Lambda * q2ddot;
  return s;
}

Vec3 zeta1_star(const Vec3& tau_b2, const Mat3& Lambda, const Vec3& eta_dd) { return tau_b2 - Lambda * eta_dd; }

// ---- quasi-steady input --------------------------------------------------------

Vec3 quasi_steady_ustar(const Mat3& Lambda, const Vec3& F_bar, const Mat3& G_bar, const Vec3& F, const Mat3& G,
                        const Vec3& tau_b0, const Vec3& Delta) {
  const Vec3 rhs = F_bar - F + (G_bar - G) * tau_b0 - Delta;
  return Lambda * G_bar * G.partialPivLu().solve(rhs);
}

Vec3 quasi_steady_ustar(const AttitudeContext& c) {
  return quasi_steady_ustar(c.Lambda, c.F_bar, c.G_bar, c.F, c.G, c.tau_b0, c.Delta);
}

Vec3 quasi_steady_equation_residual(const AttitudeContext& c, const Vec3& u, const Vec3& s_max) {
  const Mat3 LG = c.Lambda * c.G_bar;
  const Vec3 pi = control::saturation_pi(u, s_max);
  const Vec3 tau_b = c.tau_b0 + LG.partialPivLu().solve(pi);
  return LG * c.tau_b0 + pi - c.Lambda * (c.F + c.G * tau_b - c.F_bar + c.Delta) - u;
}

UstarReport quasi_steady_report(const AttitudeContext& c, const Vec3& s_max) {
  UstarReport r;
  r.ustar = quasi_steady_ustar(c);
  r.inside_identity_region = inside_identity(r.ustar, s_max);
  r.equation_residual = quasi_steady_equation_residual(c, r.ustar, s_max).cwiseAbs().maxCoeff();
  return r;
}

ReducedResidual reduced_model_residual(const AttitudeContext& c, const Vec3& s_max) {
  ReducedResidual r;
  const Vec3 ustar = quasi_steady_ustar(c);
  r.inside_identity_region = inside_identity(ustar, s_max);
  const Vec3 pi = control::saturation_pi(ustar, s_max);
  const Mat3 LG = c.Lambda * c.G_bar;
  const Vec3 actual = c.F + c.G * c.tau_b0 + c.G * LG.partialPivLu().solve(pi) + c.Delta;
  const Vec3 nominal = c.F_bar + c.G_bar * c.tau_b0;
  r.residual = actual - nominal;
  return r;
}

AttitudeContext wp_context(const ConstrainedState& x, double thrust, const Vec2& gamma_dd, const Vec3& tau_b0,
                           const Vec8& tau_e_q, const dynamics::PlantParams& plant) {
  AttitudeContext c;
  const dynamics::ConstraintMap map = dynamics::constraint_map(x, plant.actual);
  const Vec5 tau_e_r = map.S.transpose() * tau_e_q;
  const dynamics::AttitudeModel act = dynamics::attitude_submodel(x, thrust, gamma_dd, tau_e_r, plant.actual);
  const dynamics::AttitudeModel nom = dynamics::nominal_attitude_model(x, thrust, gamma_dd, plant.nominal);
  c.F = act.F;
  c.G = act.G;
  c.F_bar = nom.F;
  c.G_bar = nom.G;
  c.Lambda = control::lambda_matrix(plant.nominal.J_b, x.eta());
  c.tau_b0 = tau_b0;
  return c;
}

AttitudeContext free_context(const FreeState& x, double thrust, const Vec2& gamma_dd, const Vec3& tau_b0,
                             const Vec8& tau_e_q, const dynamics::PlantParams& plant) {
  AttitudeContext c;
  const dynamics::AttitudeModel act = dynamics::free_attitude_submodel(x, thrust, gamma_dd, tau_e_q, plant.actual);
  const dynamics::AttitudeModel nom = dynamics::nominal_free_attitude_model(x, thrust, gamma_dd, plant.nominal);
  c.F = act.F;
  c.G = act.G;
  c.F_bar = nom.F;
  c.G_bar = nom.G;
  c.Lambda = control::lambda_matrix(plant.nominal.J_b, x.eta());
  c.tau_b0 = tau_b0;
  return c;
}

// ---- sector condition ------------------------------------------------------------

Vec3 gamma_map(const AttitudeContext& c, const Vec3& ustar, const Vec3& delta, const Vec3& s_max) {
  const Mat3 LG = c.Lambda * c.G_bar;
  const Vec3 dpi = control::saturation_pi(ustar + delta, s_max) - control::saturation_pi(ustar, s_max);
  return c.Lambda * c.G * LG.partialPivLu().solve(dpi);
}

SectorReport gamma_sector_check(const AttitudeContext& c, const Vec3& s_max, Rng& rng, int samples) {
  SectorReport r;
  const Mat3 P = c.Lambda * c.G * c.G_bar.partialPivLu().inverse() * c.Lambda.partialPivLu().inverse();
  r.kappa = spectral_norm(Mat3::Identity() - P);

  Vec3 ustar = quasi_steady_ustar(c);
  if (!inside_identity(ustar, s_max)) ustar.setZero();
  const Vec3 room = (kIdentityFraction * s_max - ustar.cwiseAbs()).cwiseMax(0.0);
  if (gamma_map(c, ustar, Vec3::Zero(), s_max).norm() != 0.0) r.zero_unique = false;
  for (int k = 0; k < samples; ++k) {
    Vec3 d;
    for (int i = 0; i < 3; ++i) d(i) = (2.0 * rng.uniform() - 1.0) * room(i);
    if (d.norm() < 1e-12) continue;
    const Vec3 g = gamma_map(c, ustar, d, s_max);
    r.worst_ratio = std::max(r.worst_ratio, (g - d).norm() / d.norm());
    if (g.norm() == 0.0) r.zero_unique = false;
  }
  r.pass = r.kappa < 1.0 && r.worst_ratio <= r.kappa + 1e-9 && r.zero_unique;
  return r;
}

namespace {

/// Actual and nominal G at a trace state, in the chart of its mode.
AttitudeContext sector_context(Mode mode, const FreeState& x, const ScenarioConfig& cfg) {
  AttitudeContext c;
  const auto& pl = cfg.plant;
  if (mode == Mode::WP) {
    const ConstrainedState xc = pinned_from(x, cfg.sim.anchor);
    c.G = dynamics::attitude_submodel(xc, 0.0, Vec2::Zero(), Vec5::Zero(), pl.actual).G;
    c.G_bar = dynamics::nominal_attitude_model(xc, 0.0, Vec2::Zero(), pl.nominal).G;
  } else {
    c.G = dynamics::free_attitude_submodel(x, 0.0, Vec2::Zero(), Vec8::Zero(), pl.actual).G;
    c.G_bar = dynamics::nominal_free_attitude_model(x, 0.0, Vec2::Zero(), pl.nominal).G;
  }
  c.Lambda = control::lambda_matrix(pl.nominal.J_b, x.eta());
  return c;
}

bool inertia_hypothesis(const ScenarioConfig& cfg) {
  return (cfg.plant.nominal.J_b.array() < cfg.plant.actual.J_b.array()).all();
}

void fold_sector(TraceSectorReport& out, const SectorReport& r, std::size_t index, const hybrid::TraceSample& s) {
  if (r.kappa >= out.max_kappa) {
    out.max_kappa = r.kappa;
    out.worst_index = index;
    out.worst = s;
  }
  if (!r.pass) out.pass = false;
}

}  // namespace

TraceSectorReport sector_along_trace(const hybrid::HybridTrace& tr, const ScenarioConfig& cfg) {
  TraceSectorReport out;
  out.pass = inertia_hypothesis(cfg);
  Rng rng(cfg.sim.seed);
  for (std::size_t i = 0; i < tr.samples.size(); ++i) {
    const auto& s = tr.samples[i];
    AttitudeContext c = sector_context(s.mode, hybrid::sample_state(s), cfg);
    fold_sector(out, gamma_sector_check(c, cfg.dob.s_max, rng, 8), i, s);
  }
  return out;
}

TraceSectorReport sector_over_grid(const ScenarioConfig& cfg, int n, double half_range_deg) {
  TraceSectorReport out;
  out.pass = inertia_hypothesis(cfg);
  Rng rng(cfg.sim.seed);
  const double lim = half_range_deg * std::numbers::pi / 180.0;
  std::size_t index = 0;
  for (Mode mode : {Mode::WP, Mode::FF}) {
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        hybrid::TraceSample s;
        s.mode = mode;
        s.q.segment<3>(3) << -lim + 2.0 * lim * i / (n - 1), -lim + 2.0 * lim * j / (n - 1), 0.0;
        s.q.tail<2>() = cfg.traj.gamma_d;
        AttitudeContext c = sector_context(mode, hybrid::sample_state(s), cfg);
        fold_sector(out, gamma_sector_check(c, cfg.dob.s_max, rng, 8), index++, s);
      }
    }
  }
  return out;
}

// ---- decay ------------------------------------------------------------------------

DecayFit fit_decay(const std::vector<double>& t, const std::vector<double>& norm, double epsilon) {
  DecayFit f;
  f.epsilon = epsilon;
  const std::size_t n = norm.size();
  if (n < 8 || t.size() != n) throw Error(ErrorCode::FitDegenerate, "trace too short for a decay fit");
  std::vector<double> tail(norm.begin() + static_cast<long>(3 * n / 4), norm.end());
  std::nth_element(tail.begin(), tail.begin() + static_cast<long>(tail.size() / 2), tail.end());
  f.floor = tail[tail.size() / 2];
  if (norm[0] <= 5.0 * f.floor) {
    f.skipped = true;
    return f;
  }
  const double threshold = std::max(5.0 * f.floor, 1e-2 * norm[0]);
  std::size_t k = 0;
  while (k < n && norm[k] >= threshold) ++k;
  if (k < 5) {
    std::ostringstream os;
    os << "transient spans " << k << " samples at epsilon " << epsilon;
    throw Error(ErrorCode::FitDegenerate, os.str());
  }
  double st = 0, sy = 0, stt = 0, sty = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double y = std::log(norm[i]);
    st += t[i];
    sy += y;
    stt += t[i] * t[i];
    sty += t[i] * y;
  }
  const double kk = static_cast<double>(k);
  const double slope = (kk * sty - st * sy) / (kk * stt - st * st);
  const double icpt = (sy - slope * st) / kk;
  double ss = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double r = std::log(norm[i]) - (icpt + slope * t[i]);
    ss += r * r;
  }
  f.rate = -slope;
  f.lambda1 = std::exp(icpt + slope * t[0]);
  f.lambda2 = f.rate * epsilon;
  f.residual = std::sqrt(ss / kk);
  f.window_samples = static_cast<int>(k);
  return f;
}

std::vector<double> fast_offset_norm(const hybrid::HybridTrace& tr) {
  std::vector<double> out;
  out.reserve(tr.samples.size());
  for (const auto& s : tr.samples) {
    Eigen::Matrix<double, 12, 1> v;
    v << s.xi, s.zeta - s.zeta_star;
    out.push_back(v.norm());
  }
  return out;
}

std::vector<double> fast_offset_norm(const hybrid::HybridTrace& perturbed, const hybrid::HybridTrace& reference) {
  if (perturbed.samples.size() != reference.samples.size())
    throw Error(ErrorCode::TraceMisaligned, "perturbed and reference traces differ in length");
  std::vector<double> out;
  out.reserve(perturbed.samples.size());
  for (std::size_t i = 0; i < perturbed.samples.size(); ++i) {
    const auto& a = perturbed.samples[i];
    const auto& b = reference.samples[i];
    Eigen::Matrix<double, 12, 1> v;
    v << a.xi - b.xi, (a.zeta - a.zeta_star) - (b.zeta - b.zeta_star);
    out.push_back(v.norm());
  }
  return out;
}

DecayFit fast_decay_fit(const ScenarioConfig& cfg, double epsilon, const Vec3& perturbation) {
  ScenarioConfig c = cfg;
  c.dob.epsilon = epsilon;
  hybrid::SimOptions opt;
  opt.wp_guard_enabled = false;
  opt.t_stop = c.traj.t0_wp + c.analysis.decay_horizon;
  opt.dob_init = hybrid::DobInit::QuasiSteady;
  opt.decimation = 1;
  const hybrid::HybridTrace ref = hybrid::simulate(c, opt);
  opt.xi_perturbation = perturbation;
  const hybrid::HybridTrace tr = hybrid::simulate(c, opt);
  std::vector<double> t;
  for (const auto& s : tr.samples) t.push_back(s.t - c.traj.t0_wp);
  return fit_decay(t, fast_offset_norm(tr, ref), epsilon);
}

std::vector<DecayFit> fast_decay_fit(const ScenarioConfig& cfg, const std::vector<double>& epsilons) {
  if (epsilons.size() < 3) throw Error(ErrorCode::ConfigInvalid, "decay fit needs at least three epsilon values");
  std::vector<DecayFit> fits;
  for (double eps : epsilons)
    fits.push_back(fast_decay_fit(cfg, eps, Vec3::Constant(cfg.analysis.xi_perturbation)));
  return fits;
}

// ---- deviation ----------------------------------------------------------------------

ScenarioConfig nominal_counterpart(const ScenarioConfig& cfg) {
  ScenarioConfig c = cfg;
  c.sim.plant_model = PlantModel::Nominal;
  c.dob.enabled = false;
  c.disturbances.clear();
  return c;
}

namespace {

void check_aligned(const hybrid::HybridTrace& a, const hybrid::HybridTrace& b) {
  if (a.samples.size() != b.samples.size()) {
    std::ostringstream os;
    os << "sample counts differ (" << a.samples.size() << " vs " << b.samples.size() << ")";
    throw Error(ErrorCode::TraceMisaligned, os.str());
  }
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    if (std::abs(a.samples[i].t - b.samples[i].t) > 1e-6) {
      std::ostringstream os;
      os << "sample " << i << " at t = " << a.samples[i].t << " vs " << b.samples[i].t;
      throw Error(ErrorCode::TraceMisaligned, os.str());
    }
  }
}

}  // namespace

double nominal_actual_deviation(const hybrid::HybridTrace& actual, const hybrid::HybridTrace& nominal,
                                const AnalysisConfig& w) {
  check_aligned(actual, nominal);
  if (!actual.samples.empty() && (actual.samples[0].q != nominal.samples[0].q || actual.samples[0].qd != nominal.samples[0].qd))
    throw Error(ErrorCode::TraceMisaligned, "traces start from different states");
  double sup = 0.0;
  for (std::size_t i = 0; i < actual.samples.size(); ++i) {
    const auto& a = actual.samples[i];
    const auto& n = nominal.samples[i];
    const double d = std::sqrt(std::pow(w.w_rad * (a.q.segment<3>(3) - n.q.segment<3>(3)).norm(), 2) +
                               std::pow(w.w_rad_s * (a.qd.segment<3>(3) - n.qd.segment<3>(3)).norm(), 2) +
                               std::pow(w.w_Nm * (a.tau_b0 - n.tau_b0).norm(), 2));
    sup = std::max(sup, d);
  }
  return sup;
}

double trace_sup_difference(const hybrid::HybridTrace& a, const hybrid::HybridTrace& b) {
  // Event samples sit off the logging grid; compare at the times both traces share.
  std::map<long long, const hybrid::TraceSample*> by_time;
  for (const auto& s : b.samples) by_time[std::llround(s.t * 1e9)] = &s;
  double sup = 0.0;
  std::size_t matched = 0;
  for (const auto& x : a.samples) {
    const auto it = by_time.find(std::llround(x.t * 1e9));
    if (it == by_time.end() || it->second->mode != x.mode) continue;
    const auto& y = *it->second;
    ++matched;
    sup = std::max({sup, (x.q - y.q).cwiseAbs().maxCoeff(), (x.qd - y.qd).cwiseAbs().maxCoeff(),
                    std::abs(x.thrust - y.thrust), (x.tau_b - y.tau_b).cwiseAbs().maxCoeff(),
                    (x.tau_gamma - y.tau_gamma).cwiseAbs().maxCoeff()});
  }
  const std::size_t shorter = std::min(a.samples.size(), b.samples.size());
  if (shorter == 0 || matched + a.events.size() + b.events.size() < shorter) {
    std::ostringstream os;
    os << "only " << matched << " of " << shorter << " samples share a time and mode";
    throw Error(ErrorCode::TraceMisaligned, os.str());
  }
  return sup;
}

std::vector<DeviationRow> deviation_sweep(const ScenarioConfig& cfg, const std::vector<double>& epsilons) {
  std::vector<DeviationRow> rows;
  for (double eps : epsilons) {
    ScenarioConfig c = cfg;
    c.dob.epsilon = eps;
    hybrid::SimOptions opt;
    opt.wp_guard_enabled = false;
    opt.t_stop = c.traj.t0_wp + c.analysis.deviation_horizon;
    const auto actual = hybrid::simulate(c, opt);
    const auto nominal = hybrid::simulate(nominal_counterpart(c), opt);
    rows.push_back({eps, nominal_actual_deviation(actual, nominal, c.analysis), c.dob.s_max.maxCoeff()});
  }
  return rows;
}

// ---- maneuver metric and guards --------------------------------------------------------

ManeuverPoint to_point(const hybrid::TraceSample& s) {
  ManeuverPoint z;
  z.mode = s.mode;
  z.t = s.t;
  z.x = hybrid::sample_state(s);
  z.u = {s.thrust, s.tau_b, s.tau_gamma};
  return z;
}

namespace {

/// Coordinates of the combined space and their metric weights.
constexpr int kDim = 22;  // q(8), qd(8), u(6)
using Coords = Eigen::Matrix<double, kDim, 1>;

Coords coords(const ManeuverPoint& z) {
  Coords v;
  v << z.x.q, z.x.qd, z.u.vec();
  return v;
}

ManeuverPoint with_coords(const ManeuverPoint& base, const Coords& v) {
  ManeuverPoint z = base;
  z.x.q = v.segment<8>(0);
  z.x.qd = v.segment<8>(8);
  z.u = ControlInput::from_vec(v.segment<6>(16));
  return z;
}

Coords weights(const AnalysisConfig& w) {
  Coords c;
  c << Vec3::Constant(w.w_m), Vec3::Constant(w.w_rad), Vec2::Constant(w.w_rad),  // q
      Vec3::Constant(w.w_m_s), Vec3::Constant(w.w_rad_s), Vec2::Constant(w.w_rad_s),  // qd
      w.w_N, Vec3::Constant(w.w_Nm), Vec2::Constant(w.w_Nm);  // u
  return c;
}

}  // namespace

double metric_distance(const ManeuverPoint& a, const ManeuverPoint& b, const AnalysisConfig& w) {
  return (coords(a) - coords(b)).cwiseProduct(weights(w)).norm();
}

double margin_wp_st(const ManeuverPoint& z, const GuardContext& c) {
  if (c.guard.quasi_static) return c.guard.F_TH + z.u.thrust * std::sin(z.x.eta().y());
  const ConstrainedState x = pinned_from(z.x, c.anchor);
  return c.guard.F_TH - dynamics::end_effector_force(x, z.u, c.params).exact.x();
}

double margin_st_ff(const ManeuverPoint& z, const GuardContext& c) {
  return std::max(z.x.eta().norm() - c.guard.delta_eta, c.td_st - z.t);
}

double guard_distance(Mode from, const ManeuverPoint& z, const GuardContext& c) {
  const double inf = std::numeric_limits<double>::infinity();
  switch (from) {
    case Mode::FF: return inf;
    case Mode::ST: {
      // The time condition cannot be changed by perturbing (x, u).
      if (z.t < c.td_st) return inf;
      return (z.x.eta().norm() - c.guard.delta_eta) * c.weights.w_rad;
    }
    case Mode::WP: {
      const double m = margin_wp_st(z, c);
      const Coords v = coords(z);
      const Coords w = weights(c.weights);
      double g2 = 0.0;
      // Pinned chart: body position and velocity follow from (r, rd).
      for (int k = 3; k < kDim; ++k) {
        if (k >= 8 && k < 11) continue;
        const double h = 1e-6 * std::max(1.0, std::abs(v(k)));
        Coords vp = v, vm = v;
        vp(k) += h;
        vm(k) -= h;
        const double d = (margin_wp_st(with_coords(z, vp), c) - margin_wp_st(with_coords(z, vm), c)) / (2.0 * h);
        g2 += std::pow(d / w(k), 2);
      }
      if (g2 == 0.0) return m > 0.0 ? inf : -inf;
      return m / std::sqrt(g2);
    }
  }
  return inf;
}

double envelope_distance(const ManeuverPoint& z, const Vec3& home, const EnvelopeConfig& env,
                         const AnalysisConfig& w) {
  const Vec3 eta = z.x.eta();
  double d = std::min(env.max_tilt - std::abs(eta.x()), env.max_tilt - std::abs(eta.y())) * w.w_rad;
  const Vec3 dp = (z.x.position() - home).cwiseAbs();
  d = std::min(d, (env.box_half - dp).minCoeff() * w.w_m);
  d = std::min(d, (env.max_speed - z.x.velocity().norm()) * w.w_m_s);
  d = std::min(d, (env.max_rate - z.x.eta_dot().norm()) * w.w_rad_s);
  return d;
}

SingleVerdict check_single_maneuver(const std::vector<ManeuverPoint>& trace, const GuardContext& c,
                                    const Vec3& home, const EnvelopeConfig& env, double sigma) {
  SingleVerdict v;
  double worst = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < trace.size(); ++i) {
    const double gd = guard_distance(trace[i].mode, trace[i], c);
    const double ed = envelope_distance(trace[i], home, env, c.weights);
    v.min_guard_distance = std::min(v.min_guard_distance, gd);
    v.min_envelope_distance = std::min(v.min_envelope_distance, ed);
    if (std::min(gd, ed) < worst) {
      worst = std::min(gd, ed);
      v.worst_index = i;
    }
  }
  v.margin = worst - sigma;
  v.pass = v.margin > 0.0;
  return v;
}

ApproachVerdict check_approach_maneuver(const std::vector<ManeuverPoint>& wp_trace, const GuardContext& c,
                                        const std::vector<ManeuverPoint>& reset_images,
                                        const std::vector<std::vector<ControlInput>>& candidate_inputs,
                                        double sigma) {
  ApproachVerdict a;
  // WP has a single outgoing edge, so (a) is vacuous.
  a.clearance_margin = std::numeric_limits<double>::infinity();

  a.penetration = -std::numeric_limits<double>::infinity();
  bool reached = false;
  for (const auto& z : wp_trace) {
    const double depth = -guard_distance(Mode::WP, z, c);
    if (depth > a.penetration) {
      a.penetration = depth;
      if (!reached) a.penetration_time = z.t;
    }
    if (depth > sigma && !reached) {
      reached = true;
      a.penetration_time = z.t;
    }
  }

  if (candidate_inputs.size() != reset_images.size())
    throw Error(ErrorCode::SamplingBudgetExceeded, "one candidate input set per reset image is required");
  a.reset_samples = static_cast<int>(reset_images.size());
  for (std::size_t i = 0; i < reset_images.size(); ++i) {
    for (const auto& u : candidate_inputs[i]) {
      ManeuverPoint z = reset_images[i];
      z.u = u;
      if (guard_distance(Mode::ST, z, c) > sigma) {
        ++a.reset_samples_cleared;
        break;
      }
    }
  }

  std::ostringstream os;
  if (!reached) os << "terminal sigma-ball not inside the WP->ST guard (max depth " << a.penetration << "); ";
  if (a.reset_samples_cleared < a.reset_samples)
    os << a.reset_samples - a.reset_samples_cleared << " reset images without an admissible input; ";
  a.message = os.str();
  a.pass = reached && a.reset_samples_cleared == a.reset_samples;
  return a;
}

CoverageSet build_coverage_set(const std::vector<ManeuverPoint>& samples, double delta, const AnalysisConfig& w) {
  CoverageSet cs;
  const std::size_t n = samples.size();
  cs.assignment.assign(n, 0);
  if (n == 0) return cs;
  Eigen::MatrixXd D(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    D(i, i) = 0.0;
    for (std::size_t j = i + 1; j < n; ++j) D(i, j) = D(j, i) = metric_distance(samples[i], samples[j], w);
  }
  std::vector<bool> covered(n, false);
  std::size_t remaining = n;
  while (remaining > 0) {
    // Extreme uncovered sample: farthest from the first uncovered one's farthest partner.
    std::size_t first = 0;
    while (covered[first]) ++first;
    std::size_t extreme = first;
    for (std::size_t j = 0; j < n; ++j)
      if (!covered[j] && D(first, j) > D(first, extreme)) extreme = j;
    // Among samples within delta of it, take the one covering most uncovered samples.
    std::size_t best = extreme, best_count = 0;
    for (std::size_t c = 0; c < n; ++c) {
      if (D(extreme, c) > delta) continue;
      std::size_t count = 0;
      for (std::size_t j = 0; j < n; ++j)
        if (!covered[j] && D(c, j) <= delta) ++count;
      if (count > best_count) {
        best_count = count;
        best = c;
      }
    }
    const std::size_t pos = cs.centers.size();
    cs.centers.push_back(best);
    for (std::size_t j = 0; j < n; ++j) {
      if (!covered[j] && D(best, j) <= delta) {
        covered[j] = true;
        cs.assignment[j] = pos;
        cs.max_distance = std::max(cs.max_distance, D(best, j));
        --remaining;
      }
    }
  }
  return cs;
}

TransitionVerdict check_transition_maneuver(const ApproachVerdict& approach, const CoverageSet& coverage,
                                            const std::vector<SingleVerdict>& post,
                                            const std::vector<std::string>& post_status) {
  if (post.size() != coverage.centers.size())
    throw Error(ErrorCode::SamplingBudgetExceeded, "one post-trace per coverage center is required");
  TransitionVerdict t;
  t.approach = approach;
  t.coverage = coverage;
  t.post = post;
  t.post_status = post_status;
  for (std::size_t i = 0; i < post.size(); ++i)
    if (!post[i].pass) t.offending_centers.push_back(i);
  t.pass = approach.pass && t.offending_centers.empty();
  return t;
}

// ---- pipeline -------------------------------------------------------------------------

namespace {

std::vector<ManeuverPoint> points_of(const hybrid::HybridTrace& tr, Mode only) {
  std::vector<ManeuverPoint> pts;
  for (const auto& s : tr.samples)
    if (s.mode == only) pts.push_back(to_point(s));
  return pts;
}

template <typename F>
void parallel_for(std::size_t n, unsigned threads, F&& body) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(n, 1)));
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr failure;
  std::mutex m;
  for (unsigned k = 0; k < threads; ++k) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(m);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

ManeuverCheckReport montecarlo_transition(const ScenarioConfig& cfg, int samples, double sigma, double delta_sigma,
                                          unsigned threads) {
  if (samples < 1) throw Error(ErrorCode::SamplingBudgetExceeded, "at least one reset sample is required");
  ManeuverCheckReport rep;
  rep.sigma = sigma;
  rep.delta_sigma = delta_sigma;
  rep.samples = samples;
  const ScenarioConfig nom = nominal_counterpart(cfg);

  // Nominal maneuver to the guard, and its continuation past it.
  hybrid::SimOptions to_guard;
  to_guard.stop_at_st_ff = true;
  to_guard.decimation = 1;
  to_guard.t_stop = nom.traj.td_wp + 1.0;
  const hybrid::HybridTrace pre = hybrid::simulate(nom, to_guard);
  if (pre.events.empty()) {
    rep.transition.approach.message = "nominal WP trace never reached the WP->ST guard";
    return rep;
  }
  const hybrid::EventRecord& ev = pre.events.front();
  rep.separation_time = ev.t;

  hybrid::SimOptions cont;
  cont.wp_guard_enabled = false;
  cont.t_stop = nom.traj.td_wp;
  const hybrid::HybridTrace continued = hybrid::simulate(nom, cont);

  GuardContext ctx;
  ctx.guard = nom.guard;
  ctx.params = nom.plant.nominal;
  ctx.anchor = nom.sim.anchor;
  ctx.td_st = ev.t + nom.traj.st_window;
  ctx.weights = nom.analysis;

  // Reset images: jumps sampled at the separation state.
  const hybrid::TraceSample* pre_sample = nullptr;
  for (const auto& s : pre.samples)
    if (s.mode == Mode::WP) pre_sample = &s;
  Rng rng(cfg.sim.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::vector<ControlInput>> candidates;
  const auto& lim = nom.plant.nominal;
  for (int k = 0; k < samples; ++k) {
    ManeuverPoint z;
    z.mode = Mode::ST;
    z.t = ev.t;
    z.x = ev.pre;
    z.x.qd.head<3>() += hybrid::sample_jump(rng, nom.jump);
    z.u = {pre_sample->thrust, pre_sample->tau_b, pre_sample->tau_gamma};
    rep.reset_images.push_back(z);
    std::vector<ControlInput> cand{z.u};
    for (int j = 1; j < nom.analysis.input_samples; ++j) {
      ControlInput u;
      u.thrust = rng.uniform() * lim.T_max;
      for (int i = 0; i < 3; ++i) u.tau_b(i) = (2.0 * rng.uniform() - 1.0) * lim.tau_max(i);
      cand.push_back(u);
    }
    candidates.push_back(std::move(cand));
  }

  const ApproachVerdict approach =
      check_approach_maneuver(points_of(continued, Mode::WP), ctx, rep.reset_images, candidates, sigma);
  const CoverageSet coverage = build_coverage_set(rep.reset_images, delta_sigma, nom.analysis);

  std::vector<SingleVerdict> post(coverage.centers.size());
  std::vector<std::string> status(coverage.centers.size());
  parallel_for(coverage.centers.size(), threads, [&](std::size_t i) {
    const ManeuverPoint& c = rep.reset_images[coverage.centers[i]];
    hybrid::StartPoint sp;
    sp.mode = Mode::ST;
    sp.t = c.t;
    sp.x = c.x;
    sp.home = pre.home;
    sp.st = traj::solve_st_coefficients(c.x.eta(), c.x.eta_dot(), c.t, c.t + nom.traj.st_window);
    sp.hold = c.x.position();
    hybrid::SimOptions o;
    o.start = sp;
    o.stop_at_st_ff = true;
    o.t_stop = c.t + 2.0;
    o.decimation = 1;
    const hybrid::HybridTrace tr = hybrid::simulate(nom, o);
    std::vector<ManeuverPoint> before, all;
    for (const auto& s : tr.samples) {
      if (s.mode != Mode::ST) continue;
      all.push_back(to_point(s));
      if (s.t < ctx.td_st) before.push_back(all.back());
    }
    SingleVerdict v = check_single_maneuver(before, ctx, pre.home.position, nom.envelope, sigma);
    for (const auto& z : all) v.min_envelope_distance = std::min(v.min_envelope_distance, envelope_distance(z, pre.home.position, nom.envelope, nom.analysis));
    v.margin = std::min(v.margin, v.min_envelope_distance - sigma);
    v.pass = v.margin > 0.0 && tr.status == hybrid::Termination::StoppedAtGuard;
    status[i] = std::string(hybrid::to_string(tr.status)) + (tr.message.empty() ? "" : ": " + tr.message);
    post[i] = v;
  });

  rep.transition = check_transition_maneuver(approach, coverage, post, status);
  rep.pass = rep.transition.pass;
  return rep;
}

// ---- penalty consistency ---------------------------------------------------------------

PenaltyComparison compare_penalty_perch(const ScenarioConfig& cfg, double duration, double stiffness,
                                        double damping, double dt) {
  const auto& p = cfg.plant.actual;
  const ConstrainedState xc0 = hybrid::perched_state(cfg);
  const Vec3 anchor = xc0.anchor;
  const Vec3 eta0 = xc0.eta();
  const Vec3 kp = p.J_b.cwiseProduct(Vec3(100.0, 100.0, 50.0));
  const Vec3 kd = p.J_b.cwiseProduct(Vec3(20.0, 20.0, 14.0));
  const double thrust = p.total_mass() * p.g;

  auto input = [&](double t, const Vec3& eta, const Vec3& eta_dot) {
    const Vec3 eta_d = eta0 + Vec3(0.0, -0.1 * std::sin(std::numbers::pi * t), 0.0);
    return Vec3(-kp.cwiseProduct(eta - eta_d) - kd.cwiseProduct(eta_dot));
  };

  using V10 = Eigen::Matrix<double, 10, 1>;
  using V16 = Eigen::Matrix<double, 16, 1>;
  auto f_pinned = [&](double t, const V10& s) {
    ConstrainedState x;
    x.r = s.head<5>();
    x.rd = s.tail<5>();
    x.anchor = anchor;
    const auto w = dynamics::wire_pulling_terms(x, p);
    const auto sl = dynamics::wire_pulling_servo_locked(w, thrust, input(t, x.eta(), x.eta_dot()), Vec2::Zero(),
                                                        Vec5::Zero());
    V10 d;
    d << x.rd, sl.rdd;
    return d;
  };
  auto f_penalty = [&](double t, const V16& s) {
    FreeState x;
    x.q = s.head<8>();
    x.qd = s.tail<8>();
    const auto kin = dynamics::link_kinematics(x, p);
    const dynamics::Mat3x8 JE = dynamics::effector_jacobian(x, p);
    const Vec3 force = -stiffness * (kin.p_IE - anchor) - damping * (JE * x.qd);
    const Vec8 tau_e = JE.transpose() * force;
    const auto sl = dynamics::free_flight_servo_locked(x, thrust, input(t, x.eta(), x.eta_dot()), Vec2::Zero(),
                                                       tau_e, p);
    V16 d;
    d << x.qd, sl.qdd;
    return d;
  };
  auto rk4 = [](auto&& f, double t, const auto& s, double h) {
    const auto k1 = f(t, s);
    const auto k2 = f(t + 0.5 * h, (s + 0.5 * h * k1).eval());
    const auto k3 = f(t + 0.5 * h, (s + 0.5 * h * k2).eval());
    const auto k4 = f(t + h, (s + h * k3).eval());
    return (s + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)).eval();
  };

  V10 a;
  a << xc0.r, xc0.rd;
  const FreeState xf0 = dynamics::embed(xc0, p);
  V16 b;
  b << xf0.q, xf0.qd;
  PenaltyComparison out;
  out.duration = duration;
  const long steps = std::lround(duration / dt);
  for (long k = 0; k < steps; ++k) {
    const double t = static_cast<double>(k) * dt;
    a = rk4(f_pinned, t, a, dt);
    b = rk4(f_penalty, t, b, dt);
    out.max_r_error = std::max(out.max_r_error, (a.head<5>() - b.segment<5>(3)).cwiseAbs().maxCoeff());
    FreeState x;
    x.q = b.head<8>();
    out.max_anchor_drift = std::max(out.max_anchor_drift, (dynamics::link_kinematics(x, p).p_IE - anchor).norm());
  }
  return out;
}

}  // namespace plugpull::analysis
