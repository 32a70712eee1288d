#pragma once

#include <cstdint>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "plugpull/arm_dynamics.hpp"
#include "plugpull/dob_control.hpp"
#include "plugpull/trajectory.hpp"

namespace plugpull {

enum class Mode { WP, ST, FF };
std::string_view to_string(Mode m);

/// Which dynamics drive the plant. `Nominal` replaces the attitude (and in
/// free flight, translational) accelerations by the controller's design model.
enum class PlantModel { Full, Nominal };

struct GuardConfig {
  double F_TH = 6.95;
  double delta_eta = 5.0 * std::numbers::pi / 180.0;
  bool quasi_static = false;  // guard on -T sin(theta) instead of the exact reaction
};

/// Additive generalized force on one coordinate of q.
struct DisturbanceChannel {
  enum class Kind { Constant, Step, Sinusoid };
  int coordinate = 4;
  Kind kind = Kind::Constant;
  double amplitude = 0.0;
  double start = 0.0;      // step onset (s)
  double frequency = 0.0;  // Hz
  double phase = 0.0;      // rad
  bool in_wp = true;
  bool in_st = true;
  bool in_ff = true;

  double value(double t) const;
  bool active_in(Mode m) const;
};

struct JumpModel {
  double bound = 0.3;  // radius of the end-effector velocity jump ball (m/s)
};

struct IntegratorConfig {
  double dt = 2e-4;
  double t_end = 12.0;
  int decimation = 10;
  double event_tolerance = 1e-6;
};

struct EnvelopeConfig {
  double max_tilt = 60.0 * std::numbers::pi / 180.0;
  Vec3 box_half{3.0, 3.0, 3.0};  // around home
  double max_speed = 2.5;
  double max_rate = 10.0;  // Euler-rate magnitude (rad/s)
};

struct SimConfig {
  std::uint64_t seed = 1;
  double force_separation_at = -1.0;  // < 0 disables
  PlantModel plant_model = PlantModel::Full;
  double gamma_dd_noise = 0.0;  // std of the additive noise on the controller's gamma_dd
  double servo_tau = 0.0;       // servo time constant; 0 holds gamma kinematically
  Vec3 anchor{1.0, 0.0, 1.2};   // socket position (m)
  double yaw0 = 0.0;
};

struct AnalysisConfig {
  double sigma = 0.05;            // metric units: 0.5 N scaled by w_N
  double delta_sigma = 0.05;
  int samples = 500;
  std::vector<double> epsilons{0.04, 0.02, 0.01};
  double deviation_horizon = 3.0;
  double decay_horizon = 0.6;
  double xi_perturbation = 0.05;  // rad, added to xi_{i,1}
  double compare_mismatch = 0.6;
  int input_samples = 64;         // candidate post-reset inputs per reset image
  // Metric weights: rad, rad/s, m, m/s, N, N*m.
  double w_rad = 1.0, w_rad_s = 0.3, w_m = 1.0, w_m_s = 0.3, w_N = 0.1, w_Nm = 1.0;
};

struct ScenarioConfig {
  dynamics::PlantParams plant = dynamics::PlantParams::defaults();
  GuardConfig guard;
  traj::TrajConfig traj;
  control::NominalGains gains;
  control::DobParams dob;
  bool s_max_auto = true;
  double s_max_scale = 1.5;
  double s_max_floor = 0.05;
  control::PositionDobParams pos_dob;
  std::vector<DisturbanceChannel> disturbances;
  JumpModel jump;
  IntegratorConfig integrator;
  EnvelopeConfig envelope;
  SimConfig sim;
  AnalysisConfig analysis;

  control::ControllerParams controller_params() const;
  Vec8 disturbance(double t, Mode m) const;
};

/// Environment variables PLUGPULL__<SECTION>__<KEY> override file entries.
inline constexpr const char* kEnvPrefix = "PLUGPULL__";

/// Parses INI text. Unknown keys are ConfigInvalid.
ScenarioConfig parse_config(const std::string& text, bool apply_env = true);
ScenarioConfig load_config(const std::string& path, bool apply_env = true);
std::string serialize_config(const ScenarioConfig& cfg);

/// Throws ConfigInvalid on hard violations and returns non-fatal warnings.
std::vector<std::string> validate_config(const ScenarioConfig& cfg);

/// 64-bit FNV-1a over the canonical serialization.
std::uint64_t config_hash(const ScenarioConfig& cfg);
std::uint64_t fnv1a(const std::string& bytes);

/// Deterministic generator; algorithm recorded in trace metadata.
class Rng {
 public:
  static constexpr const char* kName = "mt19937_64";
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform();  // [0, 1), 53-bit
  double normal();   // Box-Muller
  Vec3 in_ball(double radius);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace plugpull
