#pragma once

#include <array>
#include <numbers>

#include "plugpull/spatial_math.hpp"

namespace plugpull::traj {

struct TrajConfig {
  double theta_max = 20.0 * std::numbers::pi / 180.0;
  double t0_wp = 0.0;
  double td_wp = 5.0;
  double st_window = 0.08;  // t_d,ST - t_0,ST
  Vec2 gamma_d{-std::numbers::pi / 4, -std::numbers::pi / 4};
};

/// Pose latched at WP entry, used as the FF return target.
struct Home {
  Vec3 position = Vec3::Zero();
  double yaw = 0.0;
};

struct Reference {
  Vec3 eta_d = Vec3::Zero();
  Vec3 eta_d_dot = Vec3::Zero();
  Vec3 eta_d_ddot = Vec3::Zero();
  Vec3 p_d = Vec3::Zero();
  Vec3 p_d_dot = Vec3::Zero();
  double yaw_d = 0.0;
  Vec2 gamma_d = Vec2::Zero();
  Vec2 gamma_d_dot = Vec2::Zero();
};

/// Pitch ramp from level to -theta_max over [t0_wp, td_wp), zero afterwards.
/// Position reference is the WP-entry pose (altitude hold).
Reference wp_reference(double t, const TrajConfig& cfg, const Home& home);

/// Per-axis coefficients of eta_d(t) = c2 t^2 + c1 t + c0 in absolute time.
/// The same polynomial in s = t - t0 (`local`) is what gets evaluated, since the
/// absolute form cancels badly for short windows late in a run.
struct StCoefficients {
  Vec3 c0 = Vec3::Zero();
  Vec3 c1 = Vec3::Zero();
  Vec3 c2 = Vec3::Zero();
  std::array<Vec3, 3> local{Vec3::Zero(), Vec3::Zero(), Vec3::Zero()};
  double t0 = 0.0;
  double td = 0.0;
};

/// Throws DegenerateWindow if td - t0 < 1e-4.
StCoefficients solve_st_coefficients(const Vec3& eta0, const Vec3& eta_dot0, double t0, double td);

/// Quadratic attitude recovery; position held at `hold` (entry position).
Reference st_reference(double t, const StCoefficients& c, const Vec3& hold, const Vec2& gamma_d);

/// Constant return-to-home reference.
Reference ff_reference(double t, const Home& home, const Vec2& gamma_d);

}  // namespace plugpull::traj
