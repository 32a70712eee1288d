#pragma once

#include <numbers>

#include "plugpull/arm_dynamics.hpp"
#include "plugpull/trajectory.hpp"

namespace plugpull::control {

/// Per-axis second-order Q-filter tuning shared by the attitude DOBs.
struct DobParams {
  Vec3 a0{4.0, 4.0, 4.0};
  Vec3 a1{4.0, 4.0, 4.0};
  double epsilon = 0.02;
  Vec3 s_max{1.0, 1.0, 1.0};
  bool enabled = true;
};

/// Filter states; q1/q2 filter eta, p1/p2 filter tau_b2. Index i is the axis.
struct DobState {
  Vec3 q1 = Vec3::Zero();
  Vec3 q2 = Vec3::Zero();
  Vec3 p1 = Vec3::Zero();
  Vec3 p2 = Vec3::Zero();

  /// Interleaved per-axis pairs (q_{1,1}, q_{1,2}, q_{2,1}, ...).
  Vec6 q() const;
  Vec6 p() const;
};

/// Translational DOB used in ST/FF on the nominal point-mass model.
struct PositionDobParams {
  double a0 = 4.0;
  double a1 = 4.0;
  double epsilon = 0.05;
  double d_max = 4.0;  // bound on the estimated acceleration disturbance (m/s^2)
};

struct PositionDobState {
  Vec3 q1 = Vec3::Zero();
  Vec3 q2 = Vec3::Zero();
  Vec3 p1 = Vec3::Zero();
  Vec3 p2 = Vec3::Zero();
};

struct NominalGains {
  Vec3 att_kp{225.0, 225.0, 100.0};
  Vec3 att_kd{30.0, 30.0, 20.0};
  Vec3 pos_kp{6.25, 6.25, 6.25};
  Vec3 pos_kd{5.0, 5.0, 5.0};
  double max_tilt = 35.0 * std::numbers::pi / 180.0;
};

struct ControllerParams {
  NominalGains gains;
  DobParams dob;
  PositionDobParams pos_dob;
  dynamics::ArmParams nominal;
};

/// Filter states integrated alongside the plant.
struct ControllerState {
  DobState att;
  PositionDobState pos;

  static constexpr int kSize = 24;
  Eigen::Matrix<double, kSize, 1> vec() const;
  static ControllerState from_vec(const Eigen::Matrix<double, kSize, 1>& v);
};

/// Smooth componentwise saturation: identity for |u| <= 0.9 s, tanh blend to s.
Vec3 saturation_pi(const Vec3& u, const Vec3& s_max);

/// Diagonal of the Jacobian of saturation_pi.
Vec3 saturation_pi_slope(const Vec3& u, const Vec3& s_max);

/// Lambda = Jbar^{1/2} Q with the elementwise square root of the diagonal inertia.
Mat3 lambda_matrix(const Vec3& J_bar, const Vec3& eta);

/// Computed torque on a nominal model eta_dd = F_bar + G_bar tau.
Vec3 nominal_attitude_control(const Vec3& eta, const Vec3& eta_dot, const traj::Reference& ref, const Vec3& F_bar,
                              const Mat3& G_bar, const NominalGains& gains);

/// Second-derivative estimate carried by a Q-filter: (a0/e^2)(x - q1) - (a1/e) q2.
Vec3 filter_accel(const Vec3& q1, const Vec3& q2, const Vec3& input, const Vec3& a0, const Vec3& a1, double eps);

struct DobOutput {
  Vec3 u = Vec3::Zero();
  Vec3 pi_u = Vec3::Zero();
  Vec3 tau_b1 = Vec3::Zero();
  Vec3 tau_b2 = Vec3::Zero();
  Vec3 tau_b = Vec3::Zero();
};

/// Output map of the DOB at the current filter state and measurement.
/// Throws NonInvertible if Lambda G_bar is singular.
DobOutput dob_output(const DobState& s, const Vec3& eta, const Vec3& F_bar, const Mat3& G_bar, const Mat3& Lambda,
                     const Vec3& tau_b0, const DobParams& p);

/// Filter vector field driven by eta and tau_b2.
DobState dob_derivative(const DobState& s, const Vec3& eta, const Vec3& tau_b2, const DobParams& p);

/// Filter state with zero fast-variable offsets and u = 0.
DobState dob_bumpless_init(const Vec3& eta, const Vec3& eta_dot, const Vec3& F_bar, const Mat3& Lambda,
                           const DobParams& p);

struct DobStepResult {
  DobState state;
  Vec3 tau_b = Vec3::Zero();
  Vec3 u = Vec3::Zero();
};

/// Advances the filters by dt with eta and tau_b2_prev held, then evaluates
/// the output at the new state. Throws ConfigInvalid if dt > epsilon / 10.
DobStepResult dob_step(const DobState& s, const Vec3& eta, const Vec3& tau_b2_prev, const Vec3& F_bar,
                       const Mat3& G_bar, const Vec3& J_bar, const Vec3& tau_b0, double dt, const DobParams& p);

/// Everything a controller evaluation produces; logged in the trace.
struct ControlOutput {
  dynamics::ControlInput u;
  Vec3 tau_b0 = Vec3::Zero();
  DobOutput dob;
  traj::Reference ref;  // reference actually tracked (eta_d filled in FF)
  Vec3 F_bar = Vec3::Zero();
  Mat3 G_bar = Mat3::Identity();
  Mat3 Lambda = Mat3::Identity();
  Vec3 d_hat = Vec3::Zero();
  Vec3 a_nom = Vec3::Zero();
  bool thrust_saturated = false;
};

/// Altitude PD with gravity feed-forward projected through cos(phi) cos(theta).
double thrust_law(double z, double z_dot, double z_d, double z_d_dot, double a_extra, const Vec3& eta,
                  const NominalGains& gains, const dynamics::ArmParams& nominal, bool* saturated);

/// WP: attitude DOB around the nominal pinned model; thrust holds altitude.
ControlOutput wp_controller(const dynamics::ConstrainedState& x, const traj::Reference& ref, const Vec2& gamma_dd_est,
                            const ControllerState& s, const ControllerParams& p);

/// ST/FF cascade. With attitude_from_reference the attitude set-point comes from
/// `ref` (ST); otherwise roll and pitch are extracted from the position loop (FF).
ControlOutput st_ff_controller(const dynamics::FreeState& x, const traj::Reference& ref, bool attitude_from_reference,
                               const Vec2& gamma_dd_est, const ControllerState& s, const ControllerParams& p);

/// Vector field of all controller filters.
ControllerState controller_derivative(const ControllerState& s, const ControlOutput& out, const Vec3& eta,
                                      const Vec3& position, const ControllerParams& p);

/// Position DOB state with zero disturbance estimate.
PositionDobState position_dob_init(const Vec3& position, const Vec3& velocity, const PositionDobParams& p);

}  // namespace plugpull::control
