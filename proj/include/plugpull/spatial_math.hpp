#pragma once

#include <Eigen/Dense>

namespace plugpull {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec5 = Eigen::Matrix<double, 5, 1>;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Vec8 = Eigen::Matrix<double, 8, 1>;
using Mat5 = Eigen::Matrix<double, 5, 5>;
using Mat8 = Eigen::Matrix<double, 8, 8>;

namespace math {

/// Pitch magnitude at which Euler-rate kinematics are declared singular.
inline constexpr double kGimbalLockMargin = 1e-3;

/// Roll, pitch, yaw (rad), Z-Y-X intrinsic sequence.
struct EulerAngles {
  double roll = 0.0;
  double pitch = 0.0;
  double yaw = 0.0;

  EulerAngles() = default;
  EulerAngles(double r, double p, double y) : roll(r), pitch(p), yaw(y) {}
  explicit EulerAngles(const Vec3& v) : roll(v.x()), pitch(v.y()), yaw(v.z()) {}

  Vec3 vec() const { return {roll, pitch, yaw}; }
};

/// Cross-product matrix: skew(v) * w == v.cross(w).
Mat3 skew(const Vec3& v);

Mat3 rot_x(double angle);
Mat3 rot_y(double angle);
Mat3 rot_z(double angle);

/// R_IB = Rz(yaw) * Ry(pitch) * Rx(roll).
Mat3 euler_to_rotation(const EulerAngles& eta);

/// Q(eta) with body angular velocity omega_B = Q * eta_dot.
/// Throws Error{GimbalLock} when |pitch| >= pi/2 - kGimbalLockMargin.
Mat3 euler_rate_matrix(const EulerAngles& eta);

/// Time derivative of Q along eta_dot.
Mat3 euler_rate_matrix_dot(const EulerAngles& eta, const Vec3& eta_dot);

/// Throws GimbalLock if the pitch is inside the singular margin.
void check_gimbal(double pitch);

}  // namespace math
}  // namespace plugpull
