#include "plugpull/trajectory.hpp"

#include <sstream>

#include "plugpull/errors.hpp"

namespace plugpull::traj {

Reference wp_reference(double t, const TrajConfig& cfg, const Home& home) {
  Reference r;
  r.p_d = home.position;
  r.yaw_d = 0.0;
  r.gamma_d = cfg.gamma_d;
  if (t >= cfg.t0_wp && t < cfg.td_wp) {
    const double rate = -cfg.theta_max / (cfg.td_wp - cfg.t0_wp);
    r.eta_d.y() = rate * (t - cfg.t0_wp);
    r.eta_d_dot.y() = rate;
  }
  return r;
}

StCoefficients solve_st_coefficients(const Vec3& eta0, const Vec3& eta_dot0, double t0, double td) {
  if (!(td - t0 >= 1e-4)) {
    std::ostringstream os;
    os << "ST window " << (td - t0) << " s is below 1e-4 s";
    throw Error(ErrorCode::DegenerateWindow, os.str());
  }
  const double T = td - t0;
  StCoefficients c;
  c.t0 = t0;
  c.td = td;
  c.local[0] = eta0;
  c.local[1] = eta_dot0;
  c.local[2] = -(eta0 + eta_dot0 * T) / (T * T);
  c.c2 = c.local[2];
  c.c1 = c.local[1] - 2.0 * t0 * c.local[2];
  c.c0 = c.local[0] - t0 * c.local[1] + t0 * t0 * c.local[2];
  return c;
}

Reference st_reference(double t, const StCoefficients& c, const Vec3& hold, const Vec2& gamma_d) {
  Reference r;
  r.p_d = hold;
  r.gamma_d = gamma_d;
  if (t < c.td) {
    const double s = t - c.t0;
    r.eta_d = c.local[0] + s * (c.local[1] + s * c.local[2]);
    r.eta_d_dot = c.local[1] + 2.0 * s * c.local[2];
    r.eta_d_ddot = 2.0 * c.local[2];
  }
  r.yaw_d = r.eta_d.z();
  return r;
}

Reference ff_reference(double, const Home& home, const Vec2& gamma_d) {
  Reference r;
  r.p_d = home.position;
  r.yaw_d = home.yaw;
  r.eta_d.z() = home.yaw;
  r.gamma_d = gamma_d;
  return r;
}

}  // namespace plugpull::traj
