#pragma once

#include <optional>
#include <string>
#include <vector>

#include "plugpull/scenario.hpp"

namespace plugpull::hybrid {

enum class Termination { Completed, EnvelopeExit, NoSeparation, GimbalLock, StoppedAtGuard };
std::string_view to_string(Termination t);

/// One logged sample. Constrained-mode rows carry the reconstructed free-chart state.
struct TraceSample {
  double t = 0.0;
  Mode mode = Mode::WP;
  Vec8 q = Vec8::Zero();
  Vec8 qd = Vec8::Zero();
  double thrust = 0.0;
  Vec3 tau_b = Vec3::Zero();
  Vec2 tau_gamma = Vec2::Zero();
  Vec3 F_E = Vec3::Zero();
  Vec3 eta_d = Vec3::Zero();
  Vec3 u_eta = Vec3::Zero();
  Vec3 pi_u = Vec3::Zero();
  Vec6 xi = Vec6::Zero();
  Vec6 zeta = Vec6::Zero();
  Vec3 p_d = Vec3::Zero();
  Vec3 tau_b0 = Vec3::Zero();
  Vec6 zeta_star = Vec6::Zero();  // quasi-steady zeta at this sample (not written to CSV)
};

struct EventRecord {
  double t = 0.0;
  Mode from = Mode::WP;
  Mode to = Mode::ST;
  dynamics::FreeState pre;
  dynamics::FreeState post;
  Vec3 jump = Vec3::Zero();
};

struct HybridTrace {
  std::vector<TraceSample> samples;
  std::vector<EventRecord> events;
  Termination status = Termination::Completed;
  std::string message;
  double t_final = 0.0;
  traj::Home home;
};

// ---- guards and resets -------------------------------------------------------

/// F_E,1 >= F_TH with the exact constraint reaction (or -T sin(theta) if configured).
bool guard_wp_st(const dynamics::ConstrainedState& x, const dynamics::ControlInput& u, const GuardConfig& cfg,
                 const dynamics::ArmParams& p, const Vec8& tau_e_q = Vec8::Zero());

/// ||eta||_2 < delta_eta and t >= t_d,ST.
bool guard_st_ff(const dynamics::FreeState& x, double t, double td_st, const GuardConfig& cfg);

/// Embeds the pinned state and adds the end-effector velocity jump to the body
/// velocity; eta, gamma and their rates are unchanged.
dynamics::FreeState reset_wp_st(const dynamics::ConstrainedState& x, const Vec3& jump, const dynamics::ArmParams& p);

/// Identity.
dynamics::FreeState reset_st_ff(const dynamics::FreeState& x);

/// Uniform sample in the jump ball.
Vec3 sample_jump(Rng& rng, const JumpModel& m);

// ---- simulation --------------------------------------------------------------

enum class DobInit { Bumpless, QuasiSteady };

/// Starting point other than the default perched configuration.
struct StartPoint {
  Mode mode = Mode::ST;
  double t = 0.0;
  dynamics::FreeState x;  // ST/FF start
  traj::Home home;
  traj::StCoefficients st;  // used when mode == ST
  Vec3 hold = Vec3::Zero();
};

struct SimOptions {
  bool wp_guard_enabled = true;
  std::optional<double> t_stop;   // overrides integrator.t_end
  bool stop_at_st_ff = false;     // terminate when ST -> FF fires
  std::optional<StartPoint> start;
  DobInit dob_init = DobInit::Bumpless;
  Vec3 xi_perturbation = Vec3::Zero();  // added to xi_{i,1} after initialization
  std::optional<int> decimation;
  std::optional<Vec3> jump_override;  // replaces the random WP -> ST jump
};

/// Fixed-step RK4 with bisection event location on the active flow map.
/// Simulation outcomes are reported in `status`; configuration errors throw.
HybridTrace simulate(const ScenarioConfig& cfg, const SimOptions& opt = {});

/// Default perched initial state at t0_wp.
dynamics::ConstrainedState perched_state(const ScenarioConfig& cfg);

/// Free-chart kinematic state of a sample.
dynamics::FreeState sample_state(const TraceSample& s);

}  // namespace plugpull::hybrid
