#pragma once

#include <array>

#include "plugpull/spatial_math.hpp"

namespace plugpull::dynamics {

using Mat3x8 = Eigen::Matrix<double, 3, 8>;
using Mat6x8 = Eigen::Matrix<double, 6, 8>;
using Mat6x5 = Eigen::Matrix<double, 6, 5>;
using Mat8x5 = Eigen::Matrix<double, 8, 5>;
using Mat32 = Eigen::Matrix<double, 3, 2>;

/// Physical description of the multirotor with its two-link planar arm.
///
/// Joint 1 sits `mount_depth` below the body centre of mass. Both joints
/// rotate about the body y axis; at gamma = 0 the arm hangs straight down.
/// Link i carries a point mass m_i at distance c_i from its proximal joint.
/// The end-effector is the distal tip of link 2 and only contributes
/// rotational inertia.
struct ArmParams {
  double m_b = 2.4;
  double m_1 = 0.12;
  double m_2 = 0.12;
  Vec3 J_b{0.021, 0.022, 0.033};
  Vec3 J_1{2e-5, 2e-5, 2e-5};
  Vec3 J_2{2e-5, 2e-5, 2e-5};
  Vec3 J_E{1e-5, 1e-5, 1e-5};
  double mount_depth = 0.05;
  double l_1 = 0.12;
  double l_2 = 0.12;
  double c_1 = 0.06;
  double c_2 = 0.06;
  double g = 9.81;
  double T_max = 40.0;
  Vec3 tau_max{5.0, 5.0, 5.0};

  double total_mass() const { return m_b + m_1 + m_2; }
};

/// Plant and controller-side parameter sets. The nominal set differs from the
/// actual one in masses and body inertia only.
struct PlantParams {
  ArmParams actual;
  ArmParams nominal;

  static PlantParams defaults();
};

/// x_q: q = [p_IB; eta; gamma] and its rate.
struct FreeState {
  Vec8 q = Vec8::Zero();
  Vec8 qd = Vec8::Zero();

  Vec3 position() const { return q.segment<3>(0); }
  Vec3 eta() const { return q.segment<3>(3); }
  Vec2 gamma() const { return q.segment<2>(6); }
  Vec3 velocity() const { return qd.segment<3>(0); }
  Vec3 eta_dot() const { return qd.segment<3>(3); }
  Vec2 gamma_dot() const { return qd.segment<2>(6); }
};

/// x_r: r = [eta; gamma] with the end-effector pinned at `anchor`.
struct ConstrainedState {
  Vec5 r = Vec5::Zero();
  Vec5 rd = Vec5::Zero();
  Vec3 anchor = Vec3::Zero();

  Vec3 eta() const { return r.head<3>(); }
  Vec2 gamma() const { return r.tail<2>(); }
  Vec3 eta_dot() const { return rd.head<3>(); }
  Vec2 gamma_dot() const { return rd.tail<2>(); }
};

/// Generalized input u_f = [T; tau_b; tau_gamma].
struct ControlInput {
  double thrust = 0.0;
  Vec3 tau_b = Vec3::Zero();
  Vec2 tau_gamma = Vec2::Zero();

  Vec6 vec() const {
    Vec6 u;
    u << thrust, tau_b, tau_gamma;
    return u;
  }
  static ControlInput from_vec(const Vec6& u) {
    return {u(0), u.segment<3>(1), u.segment<2>(4)};
  }
};

/// Euler-Lagrange terms M qdd + C + K = Ju^T u_f + tau_e.
template <int N>
struct ELTerms {
  Eigen::Matrix<double, N, N> M;
  Eigen::Matrix<double, N, 1> C;
  Eigen::Matrix<double, N, 1> K;
  Eigen::Matrix<double, 6, N> Ju;
};

/// Arm geometry of one rigid element expressed in {B}.
struct ElementGeometry {
  Vec3 offset = Vec3::Zero();        // s: CoM offset in {B}
  Mat32 offset_jac = Mat32::Zero();  // ds/dgamma
  Vec3 offset_acc = Vec3::Zero();    // s_dd with gamma_dd = 0
  double angle = 0.0;                // rotation about y_B relative to {B}
  Vec2 angle_jac = Vec2::Zero();     // d(angle)/dgamma
};

/// Geometry of link 1, link 2 and the end-effector.
struct ArmGeometry {
  ElementGeometry link1;
  ElementGeometry link2;
  ElementGeometry effector;
};

ArmGeometry arm_geometry(const Vec2& gamma, const Vec2& gamma_dot, const ArmParams& p);

/// Poses and angular velocities of {B}, {1}, {2}, {E}.
struct FramePoses {
  Vec3 p_IB, p_I1, p_I2, p_IE;
  Vec3 v_IB, v_I1, v_I2, v_IE;
  Mat3 R_IB, R_B1, R_B2, R_BE;
  Vec3 omega_B;  // omega^B_IB
  Vec3 omega_1;  // omega^1_I1
  Vec3 omega_2;  // omega^2_I2
  Vec3 omega_E;  // omega^E_IE
};

FramePoses link_kinematics(const FreeState& x, const ArmParams& p);
FramePoses link_kinematics(const ConstrainedState& x, const ArmParams& p);

/// Embeds a constrained state into the free chart (continuous embedding).
FreeState embed(const ConstrainedState& x, const ArmParams& p);

/// Input Jacobian J_uq (6x8).
Mat6x8 input_jacobian(const Vec3& eta);

/// Translational Jacobian of the end-effector point, d p_IE / dq.
Mat3x8 effector_jacobian(const FreeState& x, const ArmParams& p);

ELTerms<8> free_flight_terms(const FreeState& x, const ArmParams& p);

/// Total mechanical energy (kinetic + gravitational potential) in the free chart.
double mechanical_energy(const FreeState& x, const ArmParams& p);

/// qdd = M_q^-1 (-C_q - K_q + J_uq^T u_f + tau_e).
Vec8 free_flight_flow(const FreeState& x, const ControlInput& u, const Vec8& tau_e, const ArmParams& p);

/// Reduction of the free chart onto the pinned chart: qd = S rd, qdd = S rdd + bias.
struct ConstraintMap {
  FreeState embedded;
  Mat8x5 S;
  Vec8 bias;  // S_dot * rd
};

ConstraintMap constraint_map(const ConstrainedState& x, const ArmParams& p);

/// Terms of the pinned chart together with the free-chart quantities they came from.
struct WireTerms {
  ELTerms<5> terms;
  ELTerms<8> free;
  ConstraintMap map;
};

WireTerms wire_pulling_terms(const ConstrainedState& x, const ArmParams& p);

/// rdd = M_r^-1 (-C_r - K_r + J_ur^T u_f + tau_e_r).
Vec5 wire_pulling_flow(const ConstrainedState& x, const ControlInput& u, const Vec5& tau_e_r,
                       const ArmParams& p);

/// Attitude-only model eta_dd = F + G tau_b.
struct AttitudeModel {
  Vec3 F = Vec3::Zero();
  Mat3 G = Mat3::Identity();
};

/// Pinned-chart attitude model given thrust and the (measured) arm acceleration.
AttitudeModel attitude_submodel(const ConstrainedState& x, double thrust, const Vec2& gamma_dd,
                                const Vec5& tau_e_r, const ArmParams& p);

/// Nominal pinned-chart model: nominal masses/inertia, no disturbance, G = Jbar_b^-1 Q^T.
AttitudeModel nominal_attitude_model(const ConstrainedState& x, double thrust, const Vec2& gamma_dd_est,
                                     const ArmParams& nominal);

/// Free-flight attitude model obtained by eliminating the translational rows.
AttitudeModel free_attitude_submodel(const FreeState& x, double thrust, const Vec2& gamma_dd,
                                     const Vec8& tau_e, const ArmParams& p);

AttitudeModel nominal_free_attitude_model(const FreeState& x, double thrust, const Vec2& gamma_dd_est,
                                          const ArmParams& nominal);

/// Joint torque needed to hold a prescribed gamma_dd, and the resulting acceleration.
struct ServoLockedFree {
  Vec8 qdd;
  Vec2 tau_gamma;
};
ServoLockedFree free_flight_servo_locked(const FreeState& x, double thrust, const Vec3& tau_b,
                                         const Vec2& gamma_dd, const Vec8& tau_e, const ArmParams& p);

struct ServoLockedWire {
  Vec5 rdd;
  Vec2 tau_gamma;
};
ServoLockedWire wire_pulling_servo_locked(const WireTerms& w, double thrust, const Vec3& tau_b,
                                          const Vec2& gamma_dd, const Vec5& tau_e_r);

/// Constraint reaction at the pinned end-effector, exact and quasi-static.
struct EffectorForce {
  Vec3 exact = Vec3::Zero();  // force exerted on {E} by the socket, inertial axes
  double quasi_static_x = 0.0;  // -T sin(theta)
};

EffectorForce end_effector_force(const ConstrainedState& x, const ControlInput& u, const ArmParams& p,
                                 const Vec8& tau_e_q = Vec8::Zero());

/// Same, reusing already-evaluated terms and a known rdd.
Vec3 reaction_from(const WireTerms& w, const Vec5& rdd, const ControlInput& u, const Vec8& tau_e_q);

/// Smallest eigenvalue of a symmetric matrix.
double min_eigenvalue(const Eigen::MatrixXd& m);

}  // namespace plugpull::dynamics
