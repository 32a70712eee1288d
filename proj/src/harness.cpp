#include "plugpull/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include "plugpull/errors.hpp"
#include "plugpull/trace_io.hpp"

namespace plugpull::harness {

namespace fs = std::filesystem;

ExitCode exit_code_for(ErrorCode e) {
  switch (e) {
    case ErrorCode::ConfigInvalid: return ExitCode::ConfigInvalid;
    case ErrorCode::Io: return ExitCode::IoError;
    case ErrorCode::GimbalLock: return ExitCode::GimbalLock;
    case ErrorCode::SingularMass:
    case ErrorCode::NonInvertible:
    case ErrorCode::DegenerateWindow: return ExitCode::NumericalError;
    case ErrorCode::TraceMisaligned:
    case ErrorCode::FitDegenerate:
    case ErrorCode::SamplingBudgetExceeded: return ExitCode::AnalysisError;
  }
  return ExitCode::NumericalError;
}

ExitCode exit_code_for(hybrid::Termination t) {
  switch (t) {
    case hybrid::Termination::Completed:
    case hybrid::Termination::StoppedAtGuard: return ExitCode::Ok;
    case hybrid::Termination::EnvelopeExit: return ExitCode::EnvelopeExit;
    case hybrid::Termination::NoSeparation: return ExitCode::NoSeparation;
    case hybrid::Termination::GimbalLock: return ExitCode::GimbalLock;
  }
  return ExitCode::NumericalError;
}

// ---- s_max -----------------------------------------------------------------------

Vec3 ustar_envelope(const hybrid::HybridTrace& tr, const ScenarioConfig& cfg) {
  Vec3 env = Vec3::Zero();
  for (const auto& s : tr.samples) {
    const dynamics::FreeState x = hybrid::sample_state(s);
    const Vec8 tau_e = cfg.disturbance(s.t, s.mode);
    analysis::AttitudeContext c;
    if (s.mode == Mode::WP) {
      dynamics::ConstrainedState xc;
      xc.r = x.q.tail<5>();
      xc.rd = x.qd.tail<5>();
      xc.anchor = cfg.sim.anchor;
      c = analysis::wp_context(xc, s.thrust, Vec2::Zero(), s.tau_b0, tau_e, cfg.plant);
    } else {
      c = analysis::free_context(x, s.thrust, Vec2::Zero(), s.tau_b0, tau_e, cfg.plant);
    }
    env = env.cwiseMax(analysis::quasi_steady_ustar(c).cwiseAbs());
  }
  return env;
}

ScenarioConfig resolve_s_max(const ScenarioConfig& cfg) {
  if (!cfg.s_max_auto) return cfg;
  ScenarioConfig pre = cfg;
  pre.dob.s_max = Vec3::Constant(1e3);
  pre.s_max_auto = false;
  hybrid::SimOptions opt;
  opt.decimation = std::max(1, cfg.integrator.decimation);
  const hybrid::HybridTrace tr = hybrid::simulate(pre, opt);
  ScenarioConfig out = cfg;
  out.dob.s_max = (cfg.s_max_scale * ustar_envelope(tr, cfg)).cwiseMax(cfg.s_max_floor);
  out.s_max_auto = false;
  return out;
}

// ---- run ---------------------------------------------------------------------------

RunSummary summarize(const hybrid::HybridTrace& tr, const ScenarioConfig& cfg) {
  RunSummary r;
  r.status = tr.status;
  r.message = tr.message;
  r.s_max = cfg.dob.s_max;
  for (const auto& s : tr.samples)
    if (r.mode_sequence.empty() || r.mode_sequence.back() != s.mode) r.mode_sequence.push_back(s.mode);
  for (const auto& e : tr.events) {
    if (e.from == Mode::WP) {
      r.separation_time = e.t;
      r.separation_pitch = e.pre.eta().y();
    }
  }
  double last_above = -1.0;
  for (const auto& s : tr.samples) {
    const Vec3 eta = s.q.segment<3>(3);
    const double err = (eta - s.eta_d).cwiseAbs().maxCoeff();
    r.peak_attitude_error = std::max(r.peak_attitude_error, err);
    if (s.mode == Mode::WP) {
      r.peak_wp_pitch_error = std::max(r.peak_wp_pitch_error, std::abs(eta.y() - s.eta_d.y()));
    } else if (r.separation_time) {
      r.post_separation_excursion = std::max(r.post_separation_excursion, eta.norm());
      if (eta.norm() >= cfg.guard.delta_eta) last_above = s.t;
    }
  }
  if (r.separation_time && tr.status == hybrid::Termination::Completed)
    r.recovery_time = std::max(0.0, last_above - *r.separation_time);
  if (!tr.samples.empty()) r.final_position_error = (tr.samples.back().q.head<3>() - tr.home.position).norm();
  return r;
}

std::string format_summary(const RunSummary& s) {
  std::ostringstream os;
  os.precision(10);
  os << "status = " << hybrid::to_string(s.status) << '\n';
  if (!s.message.empty()) os << "message = " << s.message << '\n';
  os << "mode_sequence = ";
  for (std::size_t i = 0; i < s.mode_sequence.size(); ++i) os << (i ? "," : "") << to_string(s.mode_sequence[i]);
  os << '\n';
  if (s.separation_time) {
    os << "separation_time_s = " << *s.separation_time << '\n';
    os << "separation_pitch_deg = " << *s.separation_pitch * 180.0 / std::numbers::pi << '\n';
  } else {
    os << "separation_time_s = none\n";
  }
  os << "peak_wp_pitch_error_deg = " << s.peak_wp_pitch_error * 180.0 / std::numbers::pi << '\n';
  os << "peak_attitude_error_deg = " << s.peak_attitude_error * 180.0 / std::numbers::pi << '\n';
  os << "post_separation_excursion_deg = " << s.post_separation_excursion * 180.0 / std::numbers::pi << '\n';
  os << "recovery_time_s = ";
  if (s.recovery_time) os << *s.recovery_time << '\n';
  else os << "none\n";
  os << "final_position_error_m = " << s.final_position_error << '\n';
  os << "s_max = " << s.s_max(0) << ", " << s.s_max(1) << ", " << s.s_max(2) << '\n';
  return os.str();
}

RunResult run_scenario(const ScenarioConfig& cfg) {
  RunResult r;
  r.config = resolve_s_max(cfg);
  r.trace = hybrid::simulate(r.config);
  r.summary = summarize(r.trace, r.config);
  return r;
}

void write_run(const RunResult& r, const std::string& out_dir) {
  fs::create_directories(out_dir);
  io::write_trace_csv((fs::path(out_dir) / "trace.csv").string(), r.trace, r.config);
  io::write_events_csv((fs::path(out_dir) / "events.csv").string(), r.trace);
  io::write_text((fs::path(out_dir) / "summary.txt").string(), format_summary(r.summary));
}

// ---- epsilon sweep -------------------------------------------------------------------

SweepReport sweep_epsilon(const ScenarioConfig& cfg, std::vector<double> epsilons) {
  if (epsilons.empty()) throw Error(ErrorCode::ConfigInvalid, "no epsilon values given");
  std::sort(epsilons.begin(), epsilons.end(), std::greater<>());
  const ScenarioConfig base = resolve_s_max(cfg);
  for (double e : epsilons) {
    if (base.integrator.dt > e / 10.0 * (1 + 1e-12))
      throw Error(ErrorCode::ConfigInvalid, "dt must not exceed epsilon / 10 for every swept epsilon");
  }
  SweepReport rep;
  rep.sigma = cfg.analysis.sigma;
  const auto dev = analysis::deviation_sweep(base, epsilons);
  std::vector<analysis::DecayFit> fits;
  for (double e : epsilons)
    fits.push_back(analysis::fast_decay_fit(base, e, Vec3::Constant(cfg.analysis.xi_perturbation)));
  for (std::size_t i = 0; i < epsilons.size(); ++i) {
    SweepRow row;
    row.epsilon = epsilons[i];
    row.deviation = dev[i].deviation;
    row.fit = fits[i];
    if (i > 0 && fits[i - 1].rate > 0 && fits[i].rate > 0) {
      // Normalized to one halving of epsilon.
      const double steps = std::log(epsilons[i - 1] / epsilons[i]) / std::log(2.0);
      row.rate_ratio = std::pow(fits[i].rate / fits[i - 1].rate, 1.0 / steps);
      if (row.rate_ratio < 1.6 || row.rate_ratio > 2.4) rep.ratios_in_band = false;
    } else if (i > 0) {
      rep.ratios_in_band = false;
    }
    if (i > 0 && row.deviation > rep.rows.back().deviation) rep.deviation_monotone = false;
    rep.rows.push_back(row);
  }
  rep.deviation_below_sigma = rep.rows.back().deviation < rep.sigma;
  rep.pass = rep.deviation_monotone && rep.deviation_below_sigma && rep.ratios_in_band;
  return rep;
}

std::string format_sweep_csv(const SweepReport& r) {
  std::string out = "epsilon,deviation,decay_rate,lambda1,lambda2,fit_residual,floor,window_samples,rate_ratio\n";
  char buf[256];
  for (const auto& row : r.rows) {
    std::snprintf(buf, sizeof buf, "%.6g,%.10g,%.10g,%.10g,%.10g,%.6g,%.6g,%d,%.6g\n", row.epsilon, row.deviation,
                  row.fit.rate, row.fit.lambda1, row.fit.lambda2, row.fit.residual, row.fit.floor,
                  row.fit.window_samples, row.rate_ratio);
    out += buf;
  }
  return out;
}

std::string format_sweep_report(const SweepReport& r) {
  std::ostringstream os;
  os << "sigma = " << r.sigma << '\n';
  os << "deviation_non_increasing = " << (r.deviation_monotone ? "true" : "false") << '\n';
  os << "deviation_below_sigma = " << (r.deviation_below_sigma ? "true" : "false") << '\n';
  os << "decay_ratio_in_band = " << (r.ratios_in_band ? "true" : "false") << '\n';
  os << "verdict = " << (r.pass ? "pass" : "fail") << '\n';
  return os.str();
}

// ---- maneuver reports ----------------------------------------------------------------

std::string format_maneuver_report(const analysis::ManeuverCheckReport& r, const AnalysisConfig& w) {
  std::ostringstream os;
  os.precision(8);
  const auto& t = r.transition;
  os << "sigma = " << r.sigma << '\n';
  os << "delta_sigma = " << r.delta_sigma << '\n';
  os << "metric_weights = rad:" << w.w_rad << " rad/s:" << w.w_rad_s << " m:" << w.w_m << " m/s:" << w.w_m_s
     << " N:" << w.w_N << " Nm:" << w.w_Nm << '\n';
  os << "reset_samples = " << r.samples << '\n';
  os << "separation_time_s = " << r.separation_time << '\n';
  os << "approach.verdict = " << (t.approach.pass ? "pass" : "fail") << '\n';
  os << "approach.clearance_margin = " << t.approach.clearance_margin << '\n';
  os << "approach.penetration = " << t.approach.penetration << '\n';
  os << "approach.penetration_time_s = " << t.approach.penetration_time << '\n';
  os << "approach.reset_images_cleared = " << t.approach.reset_samples_cleared << "/" << t.approach.reset_samples
     << '\n';
  if (!t.approach.message.empty()) os << "approach.message = " << t.approach.message << '\n';
  os << "coverage.N = " << t.coverage.centers.size() << '\n';
  os << "coverage.max_distance = " << t.coverage.max_distance << '\n';
  os << "post.failed = " << t.offending_centers.size() << '\n';
  for (std::size_t k : t.offending_centers) {
    const auto& c = r.reset_images[t.coverage.centers[k]];
    os << "post.offending_center." << k << " = sample " << t.coverage.centers[k] << " v_IB=("
       << c.x.velocity().transpose() << ") status " << t.post_status[k] << " margin " << t.post[k].margin << '\n';
  }
  os << "verdict = " << (r.pass ? "pass" : "fail") << '\n';
  return os.str();
}

std::string format_margins_csv(const analysis::ManeuverCheckReport& r) {
  std::string out = "center,sample,v_x,v_y,v_z,min_guard_distance,min_envelope_distance,margin,pass,status\n";
  const auto& t = r.transition;
  char buf[384];
  for (std::size_t k = 0; k < t.coverage.centers.size(); ++k) {
    const auto& c = r.reset_images[t.coverage.centers[k]];
    const auto& v = t.post[k];
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%d,%s\n", k, t.coverage.centers[k],
                  c.x.velocity()(0), c.x.velocity()(1), c.x.velocity()(2), v.min_guard_distance,
                  v.min_envelope_distance, v.margin, v.pass ? 1 : 0, t.post_status[k].c_str());
    out += buf;
  }
  return out;
}

// ---- baseline comparison ---------------------------------------------------------------

BaselineComparison compare_baseline(const ScenarioConfig& cfg, hybrid::HybridTrace* dob_trace,
                                    hybrid::HybridTrace* baseline_trace) {
  BaselineComparison c;
  ScenarioConfig m = cfg;
  if (cfg.analysis.compare_mismatch > 0.0) m.plant.nominal.J_b = cfg.analysis.compare_mismatch * cfg.plant.actual.J_b;
  c.nominal_scale = m.plant.nominal.J_b(0) / m.plant.actual.J_b(0);

  const RunResult with = run_scenario(m);
  ScenarioConfig b = with.config;
  b.dob.enabled = false;
  const hybrid::HybridTrace without = hybrid::simulate(b);

  c.dob = with.summary;
  c.baseline = summarize(without, b);
  c.dob_better_in_wp = c.dob.peak_wp_pitch_error < c.baseline.peak_wp_pitch_error;
  c.baseline_larger_excursion = c.baseline.post_separation_excursion > c.dob.post_separation_excursion;
  c.baseline_exited = c.baseline.status == hybrid::Termination::EnvelopeExit;
  try {
    c.sup_difference = analysis::trace_sup_difference(with.trace, without);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::TraceMisaligned) throw;
  }
  c.pass = c.dob.status == hybrid::Termination::Completed && c.baseline_larger_excursion && c.baseline_exited;
  if (dob_trace) *dob_trace = with.trace;
  if (baseline_trace) *baseline_trace = without;
  return c;
}

std::string format_comparison(const BaselineComparison& c) {
  std::ostringstream os;
  os.precision(8);
  const double deg = 180.0 / std::numbers::pi;
  os << "nominal_inertia_scale = " << c.nominal_scale << '\n';
  const std::pair<const char*, const RunSummary*> runs[] = {{"dob", &c.dob}, {"baseline", &c.baseline}};
  for (const auto& [name, s] : runs) {
    os << name << ".status = " << hybrid::to_string(s->status) << '\n';
    if (!s->message.empty()) os << name << ".message = " << s->message << '\n';
    os << name << ".peak_wp_pitch_error_deg = " << s->peak_wp_pitch_error * deg << '\n';
    os << name << ".post_separation_excursion_deg = " << s->post_separation_excursion * deg << '\n';
    os << name << ".final_position_error_m = " << s->final_position_error << '\n';
  }
  auto yn = [](bool b) { return b ? "true" : "false"; };
  os << "dob_better_in_wp = " << yn(c.dob_better_in_wp) << '\n';
  os << "baseline_larger_excursion = " << yn(c.baseline_larger_excursion) << '\n';
  os << "baseline_exited_envelope = " << yn(c.baseline_exited) << '\n';
  if (c.sup_difference) os << "sup_difference = " << *c.sup_difference << '\n';
  else os << "sup_difference = n/a (sample grids differ)\n";
  os << "verdict = " << (c.pass ? "pass" : "fail") << '\n';
  return os.str();
}

// ---- plots -----------------------------------------------------------------------------

std::vector<std::string> emit_plots(const std::string& trace_path, const std::string& out_dir) {
  const io::TraceTable t = io::read_trace_csv(trace_path);
  if (t.rows.empty()) throw Error(ErrorCode::Io, "trace " + trace_path + " has no samples");
  fs::create_directories(out_dir);
  struct Panel {
    const char* name;
    const char* column;
    const char* desired;
    double scale;
    const char* unit;
  };
  const double deg = 180.0 / std::numbers::pi;
  const Panel panels[] = {{"p_x", "p_x", "p_d_x", 1.0, "m"},
                          {"p_y", "p_y", "p_d_y", 1.0, "m"},
                          {"p_z", "p_z", "p_d_z", 1.0, "m"},
                          {"phi", "phi", "eta_d_phi", deg, "deg"},
                          {"theta", "theta", "eta_d_theta", deg, "deg"},
                          {"psi", "psi", "eta_d_psi", deg, "deg"}};
  std::vector<std::string> written;
  char buf[128];
  for (const auto& p : panels) {
    std::string out = std::string("t,") + p.name + "," + p.name + "_desired,mode\n";
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.12g,%.12g,%.12g,%s\n", t.at(i, "t"), p.scale * t.at(i, p.column),
                    p.scale * t.at(i, p.desired), std::string(to_string(t.modes[i])).c_str());
      out += buf;
    }
    const std::string path = (fs::path(out_dir) / (std::string("panel_") + p.name + ".csv")).string();
    io::write_text(path, out);
    written.push_back(path);
  }

  std::string modes = "t_start,t_end,mode\n";
  std::size_t start = 0;
  for (std::size_t i = 1; i <= t.rows.size(); ++i) {
    if (i == t.rows.size() || t.modes[i] != t.modes[start]) {
      std::snprintf(buf, sizeof buf, "%.12g,%.12g,%s\n", t.at(start, "t"), t.at(i - 1, "t"),
                    std::string(to_string(t.modes[start])).c_str());
      modes += buf;
      start = i;
    }
  }
  const std::string mpath = (fs::path(out_dir) / "modes.csv").string();
  io::write_text(mpath, modes);
  written.push_back(mpath);

  std::ostringstream gp;
  gp << "# gnuplot -p plot.gp\n"
     << "set datafile separator ','\n"
     << "set key autotitle columnhead\n"
     << "set multiplot layout 3,2 title 'plug-pulling trace'\n"
     << "set style rect fc rgb '#dddddd' fs solid 0.5 noborder\n";
  // Shade the ST interval(s).
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    if (t.modes[i] == Mode::ST && (i == 0 || t.modes[i - 1] != Mode::ST)) {
      std::size_t j = i;
      while (j + 1 < t.rows.size() && t.modes[j + 1] == Mode::ST) ++j;
      gp << "set object rect from " << t.at(i, "t") << ", graph 0 to " << t.at(j, "t") << ", graph 1\n";
    }
  }
  for (const auto& p : panels) {
    gp << "set ylabel '" << p.name << " [" << p.unit << "]'\n"
       << "plot 'panel_" << p.name << ".csv' using 1:2 with lines, '' using 1:3 with lines dt 2\n";
  }
  gp << "unset multiplot\n";
  const std::string gpath = (fs::path(out_dir) / "plot.gp").string();
  io::write_text(gpath, gp.str());
  written.push_back(gpath);
  return written;
}

}  // namespace plugpull::harness
