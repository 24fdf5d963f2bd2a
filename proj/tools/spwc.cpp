// spwc: run experiment grids, summarize result directories, run self-checks.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "spwc/checks.hpp"
#include "spwc/config.hpp"
#include "spwc/errors.hpp"
#include "spwc/harness.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Self-paced weight consolidation experiments"};
  app.set_version_flag("--version", SPWC_VERSION);
  app.require_subcommand(1);

  std::string config_path;
  spwc::RunOptions run_options;
  std::size_t jobs = 1;
  std::optional<std::uint64_t> seed_override;
  std::string output_override;
  bool quiet = false;
  auto* run = app.add_subcommand("run", "Execute every method x grid point x seed of a config (or manifest)");
  run->add_option("config", config_path, "JSON config or manifest.json")->required();
  run->add_flag("--validate-only", run_options.validate_only, "Check the config and exit without training");
  run->add_option("--jobs,-j", jobs, "Concurrent runs")->check(CLI::PositiveNumber);
  run->add_option("--seed-override", seed_override, "Replace the seed list with this seed");
  run->add_option("--out,-o", output_override, "Output directory (overrides the config)");
  run->add_flag("--quiet,-q", quiet, "No progress lines");

  std::string report_dir;
  auto* report = app.add_subcommand("report", "Summarize a results directory and check convergence");
  report->add_option("dir", report_dir, "Directory written by `run`")->required();

  std::uint64_t check_seed = 20240601;
  auto* check = app.add_subcommand("check", "Regularizer conditions, closed-form and gradient checks");
  check->add_option("--seed", check_seed, "Seed for the random instances");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      const spwc::ExperimentConfig config = spwc::load_config(config_path);
      run_options.jobs = jobs;
      run_options.seed_override = seed_override;
      if (!output_override.empty()) run_options.output_override = std::filesystem::path(output_override);
      run_options.log = quiet ? nullptr : &std::cerr;
      const spwc::RunSummary summary = spwc::run_experiment(config, run_options);
      if (run_options.validate_only) {
        std::cout << "config ok: " << summary.runs << " runs\n";
        return 0;
      }
      std::cout << summary.runs - summary.failed << "/" << summary.runs << " runs completed; results in "
                << summary.output.string() << "\n";
      return summary.failed == 0 ? 0 : 1;
    }
    if (*report) return spwc::report(report_dir, std::cout);
    if (*check) {
      bool all = true;
      for (const auto& r : spwc::run_checks(check_seed)) {
        std::cout << (r.passed ? "PASS  " : "FAIL  ") << r.name << ": " << r.detail << "\n";
        all = all && r.passed;
      }
      return all ? 0 : 1;
    }
  } catch (const spwc::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
