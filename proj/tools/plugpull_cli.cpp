#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include "plugpull/errors.hpp"
#include "plugpull/harness.hpp"
#include "plugpull/trace_io.hpp"

using namespace plugpull;
using harness::ExitCode;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::optional<double> force_separation_at;
};

ScenarioConfig load(const Common& c) {
  ScenarioConfig cfg = c.config.empty() ? parse_config("") : load_config(c.config);
  if (c.seed) cfg.sim.seed = *c.seed;
  if (c.force_separation_at) cfg.sim.force_separation_at = *c.force_separation_at;
  for (const auto& w : validate_config(cfg)) std::cerr << "warning: " << w << '\n';
  return cfg;
}

void add_common(CLI::App* app, Common& c, bool with_out = true) {
  app->add_option("--config", c.config, "scenario file (INI)");
  app->add_option("--seed", c.seed, "RNG seed");
  if (with_out) app->add_option("--out", c.out, "output directory");
  app->add_option("--force-separation-at", c.force_separation_at, "fire WP->ST at this time instead of the guard");
}

int code(ExitCode e) { return static_cast<int>(e); }

void write(const std::string& dir, const std::string& name, const std::string& text) {
  std::filesystem::create_directories(dir);
  io::write_text((std::filesystem::path(dir) / name).string(), text);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"plug-pulling aerial manipulator simulation and analysis"};
  app.require_subcommand(1);
  Common common;

  auto* run = app.add_subcommand("run", "simulate the full mission and write trace, events and summary");
  add_common(run, common);

  std::vector<double> epsilons;
  auto* sweep = app.add_subcommand("sweep-epsilon", "nominal/actual deviation and fast decay per epsilon");
  add_common(sweep, common);
  sweep->add_option("--epsilons", epsilons, "epsilon values")->delimiter(',');

  std::optional<int> samples;
  std::optional<double> sigma, delta_sigma;
  auto* mc = app.add_subcommand("montecarlo-transition", "robust WP->ST transition check");
  add_common(mc, common);
  mc->add_option("--samples", samples, "reset samples (>= 100)");
  mc->add_option("--sigma", sigma, "clearance radius in the maneuver metric");
  mc->add_option("--delta-sigma", delta_sigma, "coverage radius");

  auto* cmp = app.add_subcommand("compare-baseline", "DOB vs nominal-only controller under identical mismatch");
  add_common(cmp, common);

  std::string trace_path;
  auto* plots = app.add_subcommand("emit-plots", "per-panel CSV extracts and a gnuplot script");
  plots->add_option("trace", trace_path, "trace.csv from a run")->required();
  plots->add_option("--out", common.out, "output directory");

  auto* val = app.add_subcommand("validate-config", "load, validate and print the canonical configuration");
  add_common(val, common, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : code(ExitCode::Usage);
  }

  try {
    if (*run) {
      const auto r = harness::run_scenario(load(common));
      harness::write_run(r, common.out);
      std::cout << harness::format_summary(r.summary);
      return code(harness::exit_code_for(r.summary.status));
    }
    if (*sweep) {
      ScenarioConfig cfg = load(common);
      const auto rep = harness::sweep_epsilon(cfg, epsilons.empty() ? cfg.analysis.epsilons : epsilons);
      write(common.out, "sweep.csv", harness::format_sweep_csv(rep));
      write(common.out, "sweep_report.txt", harness::format_sweep_report(rep));
      std::cout << harness::format_sweep_csv(rep) << harness::format_sweep_report(rep);
      return code(rep.pass ? ExitCode::Ok : ExitCode::VerdictFailed);
    }
    if (*mc) {
      ScenarioConfig cfg = load(common);
      const int n = samples.value_or(cfg.analysis.samples);
      if (n < 100) throw Error(ErrorCode::SamplingBudgetExceeded, "montecarlo-transition needs at least 100 samples");
      const auto rep = analysis::montecarlo_transition(harness::resolve_s_max(cfg), n,
                                                       sigma.value_or(cfg.analysis.sigma),
                                                       delta_sigma.value_or(cfg.analysis.delta_sigma));
      const std::string text = harness::format_maneuver_report(rep, cfg.analysis);
      write(common.out, "maneuver_report.txt", text);
      write(common.out, "margins.csv", harness::format_margins_csv(rep));
      std::cout << text;
      return code(rep.pass ? ExitCode::Ok : ExitCode::VerdictFailed);
    }
    if (*cmp) {
      hybrid::HybridTrace a, b;
      const ScenarioConfig cfg = load(common);
      const auto c = harness::compare_baseline(cfg, &a, &b);
      const std::string text = harness::format_comparison(c);
      write(common.out, "comparison.txt", text);
      io::write_trace_csv((std::filesystem::path(common.out) / "trace_dob.csv").string(), a, cfg);
      io::write_trace_csv((std::filesystem::path(common.out) / "trace_baseline.csv").string(), b, cfg);
      std::cout << text;
      return code(c.pass ? ExitCode::Ok : ExitCode::VerdictFailed);
    }
    if (*plots) {
      for (const auto& f : harness::emit_plots(trace_path, common.out)) std::cout << f << '\n';
      return 0;
    }
    if (*val) {
      const ScenarioConfig cfg = load(common);
      std::cout << serialize_config(cfg);
      std::printf("# config_hash=%016llx\n", static_cast<unsigned long long>(config_hash(cfg)));
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return code(harness::exit_code_for(e.code()));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return code(ExitCode::IoError);
  }
  return code(ExitCode::Usage);
}
