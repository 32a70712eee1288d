#pragma once

#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "plugpull/hybrid_automaton.hpp"

namespace plugpull::analysis {

// ---- fast variables and quasi-steady state -----------------------------------

/// Per-axis pairs (xi_{1,1}, xi_{1,2}, xi_{2,1}, ...), same layout for zeta.
struct FastVars {
  Vec6 xi = Vec6::Zero();
  Vec6 zeta = Vec6::Zero();
};

FastVars fast_variables(const control::DobState& s, const Vec3& eta, const Vec3& eta_dot, const Mat3& Lambda,
                        const control::DobParams& p);

/// Inverse change of variables: filter state from (xi, zeta, eta, eta_dot).
control::DobState dob_state_from_fast(const FastVars& v, const Vec3& eta, const Vec3& eta_dot, const Mat3& Lambda,
                                      const control::DobParams& p);

/// Quasi-steady value of zeta_[1]: tau_b2 - Lambda * eta_dd.
Vec3 zeta1_star(const Vec3& tau_b2, const Mat3& Lambda, const Vec3& eta_dd);

/// Actual and nominal attitude models at one state, with the nominal torque.
struct AttitudeContext {
  Vec3 F = Vec3::Zero();
  Mat3 G = Mat3::Identity();
  Vec3 Delta = Vec3::Zero();  // disturbance not already folded into F
  Vec3 F_bar = Vec3::Zero();
  Mat3 G_bar = Mat3::Identity();
  Mat3 Lambda = Mat3::Identity();
  Vec3 tau_b0 = Vec3::Zero();
};

/// Closed-form u* = Lambda G_bar G^-1 (F_bar - F + (G_bar - G) tau_b0 - Delta).
Vec3 quasi_steady_ustar(const Mat3& Lambda, const Vec3& F_bar, const Mat3& G_bar, const Vec3& F, const Mat3& G,
                        const Vec3& tau_b0, const Vec3& Delta);
Vec3 quasi_steady_ustar(const AttitudeContext& c);

/// Residual of the implicit quasi-steady equation at u:
/// Lambda G_bar tau_b0 + Pi(u) - Lambda (F + G tau_b - F_bar + Delta) - u,
/// with tau_b = tau_b0 + (Lambda G_bar)^-1 Pi(u).
Vec3 quasi_steady_equation_residual(const AttitudeContext& c, const Vec3& u, const Vec3& s_max);

struct UstarReport {
  Vec3 ustar = Vec3::Zero();
  bool inside_identity_region = true;  // false: closed form not valid (saturation region exceeded)
  double equation_residual = 0.0;
};
UstarReport quasi_steady_report(const AttitudeContext& c, const Vec3& s_max);

/// Actual minus nominal closed-loop attitude acceleration at the quasi-steady input.
struct ReducedResidual {
  Vec3 residual = Vec3::Zero();
  bool inside_identity_region = true;
};
ReducedResidual reduced_model_residual(const AttitudeContext& c, const Vec3& s_max);

/// Context at a pinned state for given thrust, arm acceleration and reference torque.
AttitudeContext wp_context(const dynamics::ConstrainedState& x, double thrust, const Vec2& gamma_dd,
                           const Vec3& tau_b0, const Vec8& tau_e_q, const dynamics::PlantParams& plant);

/// Same for the free-flight chart (translational rows eliminated).
AttitudeContext free_context(const dynamics::FreeState& x, double thrust, const Vec2& gamma_dd, const Vec3& tau_b0,
                             const Vec8& tau_e_q, const dynamics::PlantParams& plant);

// ---- sector condition --------------------------------------------------------

struct SectorReport {
  double kappa = 0.0;  // ||I - Lambda G G_bar^-1 Lambda^-1||_2
  double worst_ratio = 0.0;  // max |Gamma(delta) - delta| / |delta| over samples
  bool zero_unique = true;
  bool pass = true;
};

/// Gamma(delta) = Lambda G (Lambda G_bar)^-1 (Pi(u* + delta) - Pi(u*)).
Vec3 gamma_map(const AttitudeContext& c, const Vec3& ustar, const Vec3& delta, const Vec3& s_max);

/// Spectral norm at the state plus a sampled sector check inside the identity region.
SectorReport gamma_sector_check(const AttitudeContext& c, const Vec3& s_max, Rng& rng, int samples = 64);

/// Sector check at every sample of a trace (pinned or free model as per mode).
struct TraceSectorReport {
  double max_kappa = 0.0;
  std::size_t worst_index = 0;
  hybrid::TraceSample worst;
  bool pass = true;
};
TraceSectorReport sector_along_trace(const hybrid::HybridTrace& tr, const ScenarioConfig& cfg);

/// Sector check over a roll/pitch grid of +-half_range_deg in WP and FF; fails if any state violates it.
TraceSectorReport sector_over_grid(const ScenarioConfig& cfg, int n_per_axis = 7, double half_range_deg = 30.0);

// ---- fast-variable decay -----------------------------------------------------

struct DecayFit {
  double epsilon = 0.0;
  bool skipped = false;      // initial offset already at the floor
  double rate = 0.0;         // physical-time decay rate (1/s)
  double lambda1 = 0.0;
  double lambda2 = 0.0;      // rate * epsilon
  double residual = 0.0;     // rms of the log-linear fit
  double floor = 0.0;        // long-run norm of (xi~, zeta~)
  int window_samples = 0;
};

/// Fits log ||(xi~, zeta~)(t)|| to an affine model over the initial transient:
/// from t = 0 until the norm first drops below max(5 floor, 1e-2 norm(0)).
/// The floor is the median of the last quarter. Throws FitDegenerate if the
/// window holds fewer than 5 samples.
DecayFit fit_decay(const std::vector<double>& t, const std::vector<double>& norm, double epsilon);

/// ||(xi, zeta - zeta*)|| along a trace.
std::vector<double> fast_offset_norm(const hybrid::HybridTrace& tr);

/// Offset of a perturbed trace from its unperturbed twin: the slow-driven
/// quasi-steady lag is common to both and cancels.
std::vector<double> fast_offset_norm(const hybrid::HybridTrace& perturbed, const hybrid::HybridTrace& reference);

/// Perturbed and reference WP runs from a quasi-steady start, fitted.
DecayFit fast_decay_fit(const ScenarioConfig& cfg, double epsilon, const Vec3& perturbation);

/// One fit per epsilon with the configured perturbation.
std::vector<DecayFit> fast_decay_fit(const ScenarioConfig& cfg, const std::vector<double>& epsilons);

// ---- nominal/actual deviation ------------------------------------------------

/// Nominal closed loop: design-model plant, no DOB, no disturbance.
ScenarioConfig nominal_counterpart(const ScenarioConfig& cfg);

/// Sup over aligned samples of the weighted norm of [eta, eta_dot, tau_b0] differences.
/// Throws TraceMisaligned when the sample times disagree.
double nominal_actual_deviation(const hybrid::HybridTrace& actual, const hybrid::HybridTrace& nominal,
                                const AnalysisConfig& w);

/// Max-abs difference of state and applied inputs at the sample times both
/// traces share (same mode). Throws TraceMisaligned if fewer than the shorter
/// trace's samples, less event samples, match.
double trace_sup_difference(const hybrid::HybridTrace& a, const hybrid::HybridTrace& b);

struct DeviationRow {
  double epsilon = 0.0;
  double deviation = 0.0;
  double s_max = 0.0;
};

/// WP-only actual vs nominal runs over the deviation horizon for each epsilon.
std::vector<DeviationRow> deviation_sweep(const ScenarioConfig& cfg, const std::vector<double>& epsilons);

// ---- robust maneuvers --------------------------------------------------------

/// Point of the combined state-input space with its mode.
struct ManeuverPoint {
  Mode mode = Mode::WP;
  double t = 0.0;
  dynamics::FreeState x;  // free-chart coordinates
  dynamics::ControlInput u;
};

ManeuverPoint to_point(const hybrid::TraceSample& s);

/// Weighted norm of a (state, input) difference in the maneuver metric.
double metric_distance(const ManeuverPoint& a, const ManeuverPoint& b, const AnalysisConfig& w);

/// Context for evaluating margin functions.
struct GuardContext {
  GuardConfig guard;
  dynamics::ArmParams params;  // plant model of the trace
  Vec3 anchor = Vec3::Zero();
  double td_st = 0.0;
  AnalysisConfig weights;
};

/// Margin functions; the guard set is where the margin is <= 0.
double margin_wp_st(const ManeuverPoint& z, const GuardContext& c);
double margin_st_ff(const ManeuverPoint& z, const GuardContext& c);

/// First-order metric distance to {margin <= 0}: margin / ||W^-1 grad margin||.
/// Positive outside the guard, negative inside. Infinite if the margin is
/// insensitive to (x, u) and positive.
double guard_distance(Mode from, const ManeuverPoint& z, const GuardContext& c);

/// Metric margin to the flight envelope (min over box constraints).
double envelope_distance(const ManeuverPoint& z, const Vec3& home, const EnvelopeConfig& env,
                         const AnalysisConfig& w);

struct SingleVerdict {
  bool pass = true;
  double min_guard_distance = std::numeric_limits<double>::infinity();
  double min_envelope_distance = std::numeric_limits<double>::infinity();
  double margin = std::numeric_limits<double>::infinity();  // min(distances) - sigma
  std::size_t worst_index = 0;
};

/// Clearance by sigma from every outgoing guard of the mode and from the envelope boundary.
SingleVerdict check_single_maneuver(const std::vector<ManeuverPoint>& trace, const GuardContext& c,
                                    const Vec3& home, const EnvelopeConfig& env, double sigma);

struct ApproachVerdict {
  bool pass = false;
  double clearance_margin = 0.0;     // (a) other edges; +inf when there are none
  double penetration = 0.0;          // (b) deepest metric depth inside the target guard
  double penetration_time = 0.0;
  int reset_samples = 0;
  int reset_samples_cleared = 0;     // (c) samples with an admissible u_f+
  std::string message;
};

/// WP -> ST approach check on a WP trace continued past the guard.
ApproachVerdict check_approach_maneuver(const std::vector<ManeuverPoint>& wp_trace, const GuardContext& c,
                                        const std::vector<ManeuverPoint>& reset_images,
                                        const std::vector<std::vector<dynamics::ControlInput>>& candidate_inputs,
                                        double sigma);

struct CoverageSet {
  std::vector<std::size_t> centers;     // indices into the samples
  std::vector<std::size_t> assignment;  // center position per sample
  double max_distance = 0.0;
};

/// Greedy cover: every sample lies within delta of its assigned center.
CoverageSet build_coverage_set(const std::vector<ManeuverPoint>& samples, double delta, const AnalysisConfig& w);

struct TransitionVerdict {
  bool pass = false;
  ApproachVerdict approach;
  CoverageSet coverage;
  std::vector<SingleVerdict> post;
  std::vector<std::string> post_status;
  std::vector<std::size_t> offending_centers;  // positions in coverage.centers
};

TransitionVerdict check_transition_maneuver(const ApproachVerdict& approach, const CoverageSet& coverage,
                                            const std::vector<SingleVerdict>& post,
                                            const std::vector<std::string>& post_status);

// ---- full pipeline -----------------------------------------------------------

struct ManeuverCheckReport {
  double sigma = 0.0;
  double delta_sigma = 0.0;
  int samples = 0;
  double separation_time = 0.0;
  SingleVerdict wp_single;   // WP nominal trace up to the first guard crossing
  TransitionVerdict transition;
  std::vector<ManeuverPoint> reset_images;
  bool pass = false;
};

/// Samples jumps at the nominal separation state, covers the reset images and
/// simulates one post-trace per center until ST -> FF fires.
ManeuverCheckReport montecarlo_transition(const ScenarioConfig& cfg, int samples, double sigma, double delta_sigma,
                                          unsigned threads = 0);

// ---- constrained/free consistency --------------------------------------------

struct PenaltyComparison {
  double max_r_error = 0.0;       // rad
  double max_anchor_drift = 0.0;  // m, penalty model
  double duration = 0.0;
};

/// Free model with a stiff spring-damper holding the end-effector at the
/// anchor versus the pinned model, same open-loop input history.
PenaltyComparison compare_penalty_perch(const ScenarioConfig& cfg, double duration, double stiffness,
                                        double damping, double dt);

}  // namespace plugpull::analysis
