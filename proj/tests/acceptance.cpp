// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
//
// Criterion 5 runs the desk-scale permuted stream from configs/permuted_desk.json
// (about 15-20 minutes on one core); criterion 8 checks the convergence log of
// that same run. Set SPWC_ACCEPTANCE_OUT to keep the run's files somewhere.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "spwc/checks.hpp"
#include "spwc/config.hpp"
#include "spwc/harness.hpp"
#include "spwc/metrics.hpp"
#include "spwc/self_paced.hpp"
#include "spwc/trainer.hpp"

using namespace spwc;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

fs::path work_dir() {
  if (const char* env = std::getenv("SPWC_ACCEPTANCE_OUT")) return env;
  return fs::temp_directory_path() / "spwc_acceptance";
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string fmt(const char* format, double x) {
  char buffer[64];
  std::snprintf(buffer, sizeof buffer, format, x);
  return buffer;
}

std::vector<Task> synthetic_stream(std::size_t tasks, std::uint64_t seed) {
  StreamSpec spec;
  spec.kind = StreamKind::synthetic;
  spec.tasks = tasks;
  spec.seed = seed;
  spec.sizes = {600, 100, 300};
  spec.eval_subset_size = 150;
  spec.synthetic.classes = 5;
  spec.synthetic.dim = 20;
  return make_synthetic_stream(spec);
}

TrainingOptions synthetic_training() {
  TrainingOptions o;
  o.epochs = 5;
  o.batch_size = 32;
  o.lr = 0.01;
  o.importance_samples = 300;
  return o;
}

const std::size_t kSyntheticHidden[] = {64, 64};

Outcome closed_form() {
  const CheckResult r = check_closed_form(100, 20240601);
  return {r.passed, r.detail};
}

Outcome regularizer_conditions() {
  ConditionOptions options;
  options.grid = 1000;
  options.convexity_tol = 1e-9;
  options.monotone_tol = 1e-12;
  const ConditionReport report = regularizer_conditions_check(RegularizerKind::proposed, options);
  std::string detail = std::to_string(report.evaluations) + " evaluations";
  for (const auto& f : report.failures) detail += "; " + f.condition + " at " + f.witness;
  return {report.passed(), detail};
}

Outcome reductions() {
  const auto tasks = synthetic_stream(3, 5);
  const TrainingOptions o = synthetic_training();
  Method ewc;
  ewc.tag = MethodTag::ewc;
  ewc.lambda = 100.0;
  Method sp = ewc;
  sp.tag = MethodTag::sp_ewc;
  sp.sp = SelfPacedSettings{RegularizerKind::proposed, MuPolicy::fixed(1e12)};
  const ContinualState a = run_stream(tasks, ewc, o, kSyntheticHidden, 9);
  const ContinualState b = run_stream(tasks, sp, o, kSyntheticHidden, 9);
  double worst_sp = 0.0;
  for (std::size_t t = 0; t < 3; ++t) worst_sp = std::max(worst_sp, std::abs(a.accuracy.at(2, t) - b.accuracy.at(2, t)));

  Method zero = ewc;
  zero.lambda = 0.0;
  Method finetune;
  const ContinualState c = run_stream(tasks, zero, o, kSyntheticHidden, 9);
  const ContinualState d = run_stream(tasks, finetune, o, kSyntheticHidden, 9);
  double worst_zero = 0.0;
  for (std::size_t s = 0; s < 3; ++s) {
    for (std::size_t t = 0; t <= s; ++t) worst_zero = std::max(worst_zero, std::abs(c.accuracy.at(s, t) - d.accuracy.at(s, t)));
  }
  const bool ok = worst_sp <= 0.001 && worst_zero <= 1e-12;
  return {ok, "sp_ewc(mu=1e12) vs ewc max final diff " + fmt("%.4f", 100.0 * worst_sp) +
                  "pp (<= 0.1); ewc(lambda=0) vs finetune max diff " + fmt("%.3g", worst_zero) + " (<= 1e-12)"};
}

Outcome gradients() {
  const CheckResult ce = check_ce_gradient(20, 20240601);
  const CheckResult pen = check_penalty_gradient(20, 20240601);
  return {ce.passed && pen.passed, "ce: " + ce.detail + "; penalty: " + pen.detail};
}

// Shared by criteria 5 and 8.
struct DeskRun {
  bool ran = false;
  std::string error;
  fs::path dir;
  double seconds = 0.0;
};

DeskRun& desk_run() {
  static DeskRun run = [] {
    DeskRun r;
    r.dir = work_dir() / "permuted_desk";
    const auto start = std::chrono::steady_clock::now();
    try {
      ExperimentConfig config = load_config(fs::path(SPWC_SOURCE_DIR) / "configs" / "permuted_desk.json");
      config.output = r.dir;
      RunOptions options;
      const RunSummary summary = run_experiment(config, options);
      if (summary.failed) r.error = std::to_string(summary.failed) + " runs failed";
      r.ran = true;
    } catch (const std::exception& e) {
      r.error = e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
  }();
  return run;
}

Outcome directional() {
  const DeskRun& run = desk_run();
  if (!run.ran || !run.error.empty()) return {false, "desk run failed: " + run.error};
  const auto rows = read_results(run.dir / kResultsFile);
  const auto selected = grid_select(rows);
  // Average-APA per selected method and seed.
  std::map<std::string, std::map<std::uint64_t, double>> per_seed;
  for (const GridPoint& p : selected) {
    std::map<std::uint64_t, std::vector<double>> apas;
    for (const ResultsRow& r : rows) {
      if (p.matches(r)) apas[r.seed].push_back(r.apa);
    }
    for (const auto& [seed, list] : apas) per_seed[p.method][seed] = stream_average(list);
  }
  const auto mean = [&](const std::string& m) {
    std::vector<double> v;
    for (const auto& [seed, x] : per_seed.at(m)) v.push_back(x);
    return stream_average(v);
  };
  for (const char* m : {"finetune", "ewc", "sp_ewc", "mas", "sp_mas"}) {
    if (!per_seed.count(m)) return {false, std::string("method missing from results: ") + m};
  }
  bool ok = true;
  std::string detail;
  const double ft = mean("finetune");
  detail += "finetune " + fmt("%.2f", 100 * ft);
  for (const auto& [base, sp] : {std::pair<std::string, std::string>{"ewc", "sp_ewc"}, {"mas", "sp_mas"}}) {
    const double b = mean(base);
    const double s = mean(sp);
    std::size_t wins = 0;
    std::size_t seeds = 0;
    for (const auto& [seed, x] : per_seed.at(sp)) {
      ++seeds;
      if (per_seed.at(base).count(seed) && x >= per_seed.at(base).at(seed)) ++wins;
    }
    const bool order = ft < b && b <= s + 0.005;
    const bool majority = 2 * wins > seeds;
    ok = ok && order && majority;
    detail += "; " + base + " " + fmt("%.2f", 100 * b) + " " + sp + " " + fmt("%.2f", 100 * s) + " (order " +
              (order ? "ok" : "violated") + ", " + sp + " >= " + base + " on " + std::to_string(wins) + "/" +
              std::to_string(seeds) + " seeds)";
  }
  detail += "; run took " + fmt("%.0f", run.seconds) + " s";
  if (run.seconds > 1200.0) {
    ok = false;
    detail += " (over 20 min)";
  }
  return {ok, detail};
}

Outcome storage() {
  const std::uint64_t n = 610500;
  StorageLedger all;
  StorageLedger topk;
  for (std::uint64_t t = 1; t <= 10; ++t) {
    all.prams.push_back(StorageLedger::footprint(n, t - 1));
    topk.prams.push_back(StorageLedger::footprint(n, std::min<std::uint64_t>(5, t - 1)));
  }
  double harmonic = 0.0;
  for (int t = 1; t <= 10; ++t) harmonic += 1.0 / t;
  const double ps_all = ps(all, 10);
  const double ps_topk = ps(topk, 10);
  const bool ok = std::abs(ps_all - 0.2929) <= 1e-4 && std::abs(ps_all - harmonic / 10.0) <= 1e-15 && ps_topk > 0.29;
  return {ok, "all-tasks PS " + fmt("%.6f", ps_all) + " (0.2929 +- 1e-4); topk(5) PS " + fmt("%.6f", ps_topk) + " (> 0.29)"};
}

Outcome skip_guarantee() {
  const auto tasks = synthetic_stream(5, 6);
  const std::size_t k = 2;
  Method m;
  m.tag = MethodTag::sp_ewc;
  m.lambda = 100.0;
  m.sp = SelfPacedSettings{RegularizerKind::proposed, MuPolicy::topk(k)};
  const ContinualState state = run_stream(tasks, m, synthetic_training(), kSyntheticHidden, 3);
  bool ok = true;
  std::string detail;
  for (const StageRecord& s : state.stages) {
    const std::size_t past = s.stage - 1;
    std::size_t dropped = 0;
    for (double v : s.v) dropped += v == 0.0;
    const std::uint64_t expected = past - dropped;
    const bool stage_ok = s.min_touched_per_step == expected && s.max_touched_per_step == expected &&
                          s.snapshots_touched == s.steps * expected && expected == std::min(k, past);
    ok = ok && stage_ok;
    detail += (detail.empty() ? "" : "; ") + std::string("stage ") + std::to_string(s.stage) + " dropped " +
              std::to_string(dropped) + " touched " + std::to_string(s.min_touched_per_step) + ".." +
              std::to_string(s.max_touched_per_step) + "/step";
  }
  return {ok, detail};
}

Outcome convergence() {
  const DeskRun& run = desk_run();
  if (!run.ran) return {false, "desk run failed: " + run.error};
  std::ostringstream sink;
  const int code = report(run.dir, sink);
  const auto verdicts = check_convergence(run.dir / kConvergenceFile);
  std::size_t failed = 0;
  double worst = 0.0;
  for (const auto& v : verdicts) {
    failed += !v.passed;
    worst = std::max(worst, v.worst_rise);
  }
  return {code == 0 && failed == 0 && !verdicts.empty(),
          std::to_string(verdicts.size() - failed) + "/" + std::to_string(verdicts.size()) +
              " stage windows nonincreasing within 2% (worst rise " + fmt("%.3f", 100 * worst) + "%)"};
}

Outcome determinism() {
  const fs::path dir = work_dir() / "determinism";
  fs::remove_all(dir);
  ExperimentConfig config = load_config(fs::path(SPWC_SOURCE_DIR) / "configs" / "smoke.json");
  config.output = dir / "first";
  run_experiment(config, RunOptions{});
  const std::string manifest = slurp(dir / "first" / kManifestFile);
  for (const char* name : {"a", "b"}) {
    ExperimentConfig again = parse_config(manifest, dir);
    again.output = dir / name;
    run_experiment(again, RunOptions{});
  }
  const std::string a = slurp(dir / "a" / kResultsFile);
  const std::string b = slurp(dir / "b" / kResultsFile);
  const bool ok = !a.empty() && a == b && a == slurp(dir / "first" / kResultsFile);
  return {ok, std::to_string(a.size()) + "-byte results.csv, " + (ok ? "identical" : "different") + " across runs"};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "closed-form weight matches grid argmin", closed_form},
      {2, "self-paced regularizer conditions", regularizer_conditions},
      {3, "reductions to ewc and finetune", reductions},
      {4, "gradient checks", gradients},
      {5, "desk-scale permuted ordering", directional},
      {6, "parameter-size efficiency", storage},
      {7, "skip guarantee", skip_guarantee},
      {8, "convergence logging", convergence},
      {9, "determinism", determinism},
  };
  int failures = 0;
  for (const Criterion& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("[%s] %d %s: %s (%.1f s)\n", o.passed ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), seconds);
    std::fflush(stdout);
    failures += !o.passed;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
