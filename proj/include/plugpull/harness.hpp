#pragma once

#include <optional>
#include <string>
#include <vector>

#include "plugpull/analysis.hpp"
#include "plugpull/errors.hpp"

namespace plugpull::harness {

/// Process exit codes of the CLI; every failure path has its own value.
enum class ExitCode : int {
  Ok = 0,
  VerdictFailed = 1,     // an analysis verdict or comparison did not pass
  ConfigInvalid = 2,
  IoError = 3,
  NoSeparation = 4,
  EnvelopeExit = 5,
  GimbalLock = 6,
  NumericalError = 7,    // singular mass matrix, non-invertible DOB gain, degenerate window
  AnalysisError = 8,     // misaligned traces, degenerate fit, sampling budget
  Usage = 64,
};

ExitCode exit_code_for(ErrorCode e);
ExitCode exit_code_for(hybrid::Termination t);

/// Derives s_max from a preliminary run with a wide saturation when the
/// configuration asks for it; otherwise returns the configuration unchanged.
ScenarioConfig resolve_s_max(const ScenarioConfig& cfg);

/// sup |u*| per axis along a trace, from the closed-form quasi-steady input.
Vec3 ustar_envelope(const hybrid::HybridTrace& tr, const ScenarioConfig& cfg);

struct RunSummary {
  hybrid::Termination status = hybrid::Termination::Completed;
  std::string message;
  std::vector<Mode> mode_sequence;
  std::optional<double> separation_time;
  std::optional<double> separation_pitch;  // rad
  double peak_wp_pitch_error = 0.0;        // rad
  double peak_attitude_error = 0.0;        // rad, all modes
  double post_separation_excursion = 0.0;  // rad, max ||eta|| after separation
  std::optional<double> recovery_time;     // s after separation until ||eta|| < delta_eta for good
  double final_position_error = 0.0;       // m
  Vec3 s_max = Vec3::Zero();
};

RunSummary summarize(const hybrid::HybridTrace& tr, const ScenarioConfig& cfg);
std::string format_summary(const RunSummary& s);

struct RunResult {
  ScenarioConfig config;  // with s_max resolved
  hybrid::HybridTrace trace;
  RunSummary summary;
};

/// Resolves s_max and runs the full mission.
RunResult run_scenario(const ScenarioConfig& cfg);

/// Writes trace.csv, events.csv and summary.txt into out_dir.
void write_run(const RunResult& r, const std::string& out_dir);

struct SweepRow {
  double epsilon = 0.0;
  double deviation = 0.0;
  analysis::DecayFit fit;
  double rate_ratio = 0.0;  // to the previous (larger) epsilon; 0 for the first row
};

struct SweepReport {
  std::vector<SweepRow> rows;
  double sigma = 0.0;
  bool deviation_monotone = true;
  bool deviation_below_sigma = true;
  bool ratios_in_band = true;
  bool pass = false;
};

/// Deviation and decay fit per epsilon; epsilons are processed in decreasing order.
SweepReport sweep_epsilon(const ScenarioConfig& cfg, std::vector<double> epsilons);
std::string format_sweep_csv(const SweepReport& r);
std::string format_sweep_report(const SweepReport& r);

std::string format_maneuver_report(const analysis::ManeuverCheckReport& r, const AnalysisConfig& w);
std::string format_margins_csv(const analysis::ManeuverCheckReport& r);

struct BaselineComparison {
  RunSummary dob;
  RunSummary baseline;
  double nominal_scale = 0.0;  // J_bar / J used for both runs
  bool dob_better_in_wp = false;
  bool baseline_larger_excursion = false;
  bool baseline_exited = false;
  std::optional<double> sup_difference;  // when both traces share the sample grid
  bool pass = false;  // DOB completes, baseline excursion strictly larger, baseline leaves the envelope
};

/// DOB-wrapped vs nominal-only controller under identical mismatch and disturbance.
BaselineComparison compare_baseline(const ScenarioConfig& cfg, hybrid::HybridTrace* dob_trace = nullptr,
                                    hybrid::HybridTrace* baseline_trace = nullptr);
std::string format_comparison(const BaselineComparison& c);

/// Per-panel CSV extracts, mode intervals and a gnuplot script. Throws Io on an empty trace.
std::vector<std::string> emit_plots(const std::string& trace_path, const std::string& out_dir);

}  // namespace plugpull::harness
