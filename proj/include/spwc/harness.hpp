#pragma once

// Experiment runner and result files.
//
// Output directory contents:
//   results.csv      one row per (run, stage): metrics and the accuracy row
//   weights.csv      one row per (run, stage, past task): psi, eta, v, distance
//   convergence.csv  one row per (run, stage, epoch): objective terms
//   timing.csv       wall-clock seconds per (run, stage); not deterministic
//   manifest.json    resolved config, artifact version, platform, run status
// All CSVs: comma separated, LF endings, header row, %.17g floats. Rows are
// ordered by run index (method, lr, strength, mu, seed) then stage.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spwc/config.hpp"

namespace spwc {

inline constexpr const char* kResultsFile = "results.csv";
inline constexpr const char* kWeightsFile = "weights.csv";
inline constexpr const char* kConvergenceFile = "convergence.csv";
inline constexpr const char* kTimingFile = "timing.csv";
inline constexpr const char* kManifestFile = "manifest.json";

/// %.17g; parses back to exactly `x`.
std::string format_double(double x);

struct RunOptions {
  std::size_t jobs = 1;
  bool validate_only = false;
  std::optional<std::uint64_t> seed_override;
  std::optional<std::filesystem::path> output_override;
  std::ostream* log = nullptr;  // progress lines; null for silence
};

struct RunSummary {
  std::size_t runs = 0;
  std::size_t failed = 0;
  std::filesystem::path output;
};

/// Applies the overrides, builds the stream once and executes every run of
/// the grid on a pool of `jobs` workers. Failed runs keep the stages they
/// finished and are listed in the manifest.
RunSummary run_experiment(ExperimentConfig config, const RunOptions& options);

/// One parsed row of results.csv.
struct ResultsRow {
  std::string stream;
  std::string method;
  std::string tag;
  double lambda = 0.0;
  double gamma = 0.0;
  double lr = 0.0;
  std::string mu_policy;
  std::string regularizer;
  std::uint64_t seed = 0;
  std::size_t stage = 0;
  std::size_t task_id = 0;
  double apa = 0.0;
  double acf = 0.0;
  double ps_active = 0.0;
  double ps_total = 0.0;
  std::optional<double> mu;
  std::size_t retained = 0;
  std::size_t stored = 0;
  std::uint64_t touched_min = 0;
  std::uint64_t touched_max = 0;
  std::vector<std::optional<double>> accuracy;  // acc_1..acc_T; empty cell = unseen
};

std::vector<ResultsRow> read_results(const std::filesystem::path& path);

struct GridPoint {
  std::string method;
  double lambda = 0.0;
  double gamma = 0.0;
  double lr = 0.0;
  std::string mu_policy;
  std::string regularizer;
  double score = 0.0;  // final-stage APA averaged over seeds
  std::size_t seeds = 0;

  /// Same hyperparameters (score ignored).
  bool matches(const ResultsRow& row) const;
};

/// Per method (first-appearance order), the grid point with the highest
/// final-stage APA averaged over seeds. Ties go to the smaller lambda or
/// gamma, then the smaller lr. Throws UsageError on empty input.
std::vector<GridPoint> grid_select(std::span<const ResultsRow> rows);

/// One convergence window verdict.
struct ConvergenceVerdict {
  std::string run;  // method/hyperparameter/seed key
  std::size_t stage = 0;
  std::size_t epochs_checked = 0;
  double worst_rise = 0.0;  // max over the window of (obj[e+1]-obj[e]) / max|obj|
  bool passed = true;
};

/// Over the last min(5, E) epochs of every stage, each consecutive rise must
/// be at most `band` times the largest objective magnitude in the window.
std::vector<ConvergenceVerdict> check_convergence(const std::filesystem::path& convergence_csv,
                                                  double band = 0.02, std::size_t window = 5);

/// Reads a results directory and writes summary.txt plus report_*.csv next to
/// it; the summary also goes to `out`. Returns 0 when every convergence window
/// passes, 1 otherwise. Throws UsageError naming any missing input file.
int report(const std::filesystem::path& dir, std::ostream& out);

}  // namespace spwc
