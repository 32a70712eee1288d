#include "plugpull/spatial_math.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "plugpull/errors.hpp"

namespace plugpull {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::GimbalLock: return "GimbalLock";
    case ErrorCode::SingularMass: return "SingularMass";
    case ErrorCode::DegenerateWindow: return "DegenerateWindow";
    case ErrorCode::NonInvertible: return "NonInvertible";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::TraceMisaligned: return "TraceMisaligned";
    case ErrorCode::FitDegenerate: return "FitDegenerate";
    case ErrorCode::SamplingBudgetExceeded: return "SamplingBudgetExceeded";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

namespace math {

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
      -v.y(), v.x(), 0.0;
  return m;
}

Mat3 rot_x(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 m;
  m << 1, 0, 0,
       0, c, -s,
       0, s, c;
  return m;
}

Mat3 rot_y(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 m;
  m << c, 0, s,
       0, 1, 0,
      -s, 0, c;
  return m;
}

Mat3 rot_z(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 m;
  m << c, -s, 0,
       s, c, 0,
       0, 0, 1;
  return m;
}

Mat3 euler_to_rotation(const EulerAngles& eta) {
  return rot_z(eta.yaw) * rot_y(eta.pitch) * rot_x(eta.roll);
}

void check_gimbal(double pitch) {
  if (!(std::abs(pitch) < std::numbers::pi / 2 - kGimbalLockMargin)) {
    std::ostringstream os;
    os << "pitch " << pitch << " rad is inside the Euler singularity margin";
    throw Error(ErrorCode::GimbalLock, os.str());
  }
}

Mat3 euler_rate_matrix(const EulerAngles& eta) {
  check_gimbal(eta.pitch);
  const double sr = std::sin(eta.roll), cr = std::cos(eta.roll);
  const double sp = std::sin(eta.pitch), cp = std::cos(eta.pitch);
  Mat3 q;
  q << 1.0, 0.0, -sp,
       0.0, cr, sr * cp,
       0.0, -sr, cr * cp;
  return q;
}

Mat3 euler_rate_matrix_dot(const EulerAngles& eta, const Vec3& eta_dot) {
  const double sr = std::sin(eta.roll), cr = std::cos(eta.roll);
  const double sp = std::sin(eta.pitch), cp = std::cos(eta.pitch);
  const double dr = eta_dot.x(), dp = eta_dot.y();
  Mat3 qd;
  qd << 0.0, 0.0, -cp * dp,
        0.0, -sr * dr, cr * cp * dr - sr * sp * dp,
        0.0, -cr * dr, -sr * cp * dr - cr * sp * dp;
  return qd;
}

}  // namespace math
}  // namespace plugpull
