#include "spwc/harness.hpp"

#include <sys/utsname.h>

#include <atomic>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "spwc/errors.hpp"

namespace spwc {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_double(double x) {
  char buffer[32];
  std::snprintf(buffer, sizeof buffer, "%.17g", x);
  return buffer;
}

namespace {

constexpr const char* kRunKeyHeader = "method,lambda,gamma,lr,mu_policy,regularizer,seed";

std::string run_key(const RunSpec& run) {
  std::string key = run.name;
  key += ',' + format_double(run.method.lambda);
  key += ',' + format_double(run.method.gamma);
  key += ',' + format_double(run.lr);
  key += ',' + (run.method.sp ? to_string(run.method.sp->mu_policy) : std::string());
  key += ',' + (run.method.sp ? to_string(run.method.sp->kind) : std::string());
  key += ',' + std::to_string(run.seed);
  return key;
}

std::string results_header(std::size_t tasks) {
  std::string h = "stream,";
  h += kRunKeyHeader;
  h += ",tag,stage,task_id,apa,acf,ps_active,ps_total,mu,retained_k,stored,touched_min,touched_max";
  for (std::size_t t = 1; t <= tasks; ++t) h += ",acc_" + std::to_string(t);
  return h + '\n';
}

std::string weights_header() {
  return std::string(kRunKeyHeader) + ",stage,task,psi,eta,v,distance\n";
}

std::string convergence_header() {
  return std::string(kRunKeyHeader) + ",stage,epoch,objective,ce,penalty,sp_term\n";
}

std::string timing_header() { return std::string(kRunKeyHeader) + ",stage,seconds\n"; }

// Rows for one finished stage, appended to the run's private files.
struct StageText {
  std::string results;
  std::string weights;
  std::string convergence;
  std::string timing;
};

StageText render_stage(const ExperimentConfig& config, const RunSpec& run, const StageRecord& s,
                       const std::vector<std::size_t>& past_task_ids) {
  const std::string key = run_key(run);
  StageText text;
  std::string& r = text.results;
  r = to_string(config.stream.kind) + ',' + key + ',' + to_string(run.method.tag);
  r += ',' + std::to_string(s.stage) + ',' + std::to_string(s.task_id);
  r += ',' + format_double(s.apa) + ',' + format_double(s.acf);
  r += ',' + format_double(s.ps_active) + ',' + format_double(s.ps_total);
  r += ',' + ((run.method.sp && !s.v.empty()) ? format_double(s.mu) : std::string());
  r += ',' + std::to_string(s.retained) + ',' + std::to_string(s.stored);
  r += ',' + std::to_string(s.min_touched_per_step) + ',' + std::to_string(s.max_touched_per_step);
  for (std::size_t t = 0; t < config.stream.tasks; ++t) {
    r += ',';
    if (t < s.test_accuracy.size()) r += format_double(s.test_accuracy[t]);
  }
  r += '\n';

  for (std::size_t t = 0; t < s.psi.size(); ++t) {
    std::string& w = text.weights;
    w += key + ',' + std::to_string(s.stage) + ',' + std::to_string(past_task_ids[t]);
    w += ',' + format_double(s.psi[t]) + ',' + format_double(s.eta[t]);
    w += ',' + (t < s.v.size() ? format_double(s.v[t]) : std::string());
    w += ',' + (t < s.distance.size() ? format_double(s.distance[t]) : std::string());
    w += '\n';
  }
  for (const EpochRecord& e : s.epochs) {
    std::string& c = text.convergence;
    c += key + ',' + std::to_string(s.stage) + ',' + std::to_string(e.epoch);
    c += ',' + format_double(e.objective) + ',' + format_double(e.ce);
    c += ',' + format_double(e.penalty) + ',' + format_double(e.sp_term) + '\n';
  }
  text.timing = key + ',' + std::to_string(s.stage) + ',' + format_double(s.seconds) + '\n';
  return text;
}

void append_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::app);
  out << text;
  if (!out) throw FormatError("cannot write " + path.string());
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw FormatError("cannot write " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

json platform_fingerprint() {
  json p;
#ifdef __VERSION__
  p["compiler"] = __VERSION__;
#endif
  p["build_type"] = SPWC_BUILD_TYPE;
  p["native_arch"] = static_cast<bool>(SPWC_NATIVE);
  utsname u{};
  if (uname(&u) == 0) {
    p["os"] = u.sysname;
    p["machine"] = u.machine;
  }
  return p;
}

struct Outcome {
  bool ok = false;
  std::size_t stages = 0;
  std::string error;
};

}  // namespace

RunSummary run_experiment(ExperimentConfig config, const RunOptions& options) {
  if (options.seed_override) config.seeds = {*options.seed_override};
  if (options.output_override) config.output = *options.output_override;
  const std::vector<RunSpec> runs = expand_grid(config);
  RunSummary summary;
  summary.runs = runs.size();
  summary.output = config.output;
  if (options.validate_only) return summary;

  const std::vector<Task> tasks = build_stream(config.stream);
  fs::create_directories(config.output);
  const fs::path scratch = config.output / ".runs";
  fs::remove_all(scratch);
  fs::create_directories(scratch);
  const auto part = [&](std::size_t index, const char* kind) {
    char name[48];
    std::snprintf(name, sizeof name, "run-%06zu.%s", index, kind);
    return scratch / name;
  };

  std::vector<Outcome> outcomes(runs.size());
  std::mutex log_mutex;
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < runs.size(); i = next++) {
      const RunSpec& run = runs[i];
      Outcome& outcome = outcomes[i];
      TrainingOptions training = config.training;
      training.lr = run.lr;
      std::vector<std::size_t> seen_ids;
      try {
        run_stream(tasks, run.method, training, config.hidden, run.seed,
                   [&](const ContinualState& state) {
                     const StageRecord& s = state.stages.back();
                     const StageText text = render_stage(config, run, s, seen_ids);
                     append_file(part(i, "results"), text.results);
                     append_file(part(i, "weights"), text.weights);
                     append_file(part(i, "convergence"), text.convergence);
                     append_file(part(i, "timing"), text.timing);
                     seen_ids.push_back(s.task_id);
                     outcome.stages = s.stage;
                     if (options.log) {
                       std::lock_guard lock(log_mutex);
                       *options.log << "[" << (i + 1) << "/" << runs.size() << "] " << run_key(run)
                                    << " stage " << s.stage << " apa " << s.apa << "\n";
                     }
                   });
        outcome.ok = true;
      } catch (const std::exception& e) {
        outcome.error = "stage " + std::to_string(outcome.stages + 1) + ": " + e.what();
        if (options.log) {
          std::lock_guard lock(log_mutex);
          *options.log << "[" << (i + 1) << "/" << runs.size() << "] " << run_key(run)
                       << " FAILED " << outcome.error << "\n";
        }
      }
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(options.jobs, runs.size()));
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  // Single-threaded merge in run order.
  std::string results = results_header(config.stream.tasks);
  std::string weights = weights_header();
  std::string convergence = convergence_header();
  std::string timing = timing_header();
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (fs::exists(part(i, "results"))) {
      results += read_text(part(i, "results"));
      weights += read_text(part(i, "weights"));
      convergence += read_text(part(i, "convergence"));
      timing += read_text(part(i, "timing"));
    }
  }
  write_file(config.output / kResultsFile, results);
  write_file(config.output / kWeightsFile, weights);
  write_file(config.output / kConvergenceFile, convergence);
  write_file(config.output / kTimingFile, timing);

  json manifest;
  manifest["artifact_version"] = SPWC_VERSION;
  manifest["platform"] = platform_fingerprint();
  manifest["config"] = json::parse(config_to_json(config));
  json run_list = json::array();
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const RunSpec& run = runs[i];
    json entry = {{"index", run.index},
                  {"method", run.name},
                  {"tag", to_string(run.method.tag)},
                  {"lambda", run.method.lambda},
                  {"gamma", run.method.gamma},
                  {"lr", run.lr},
                  {"seed", run.seed},
                  {"stages_completed", outcomes[i].stages},
                  {"status", outcomes[i].ok ? "ok" : "failed"}};
    if (run.method.sp) {
      entry["mu_policy"] = to_string(run.method.sp->mu_policy);
      entry["regularizer"] = to_string(run.method.sp->kind);
    }
    if (!outcomes[i].ok) {
      entry["error"] = outcomes[i].error;
      ++summary.failed;
    }
    run_list.push_back(entry);
  }
  manifest["runs"] = run_list;
  manifest["failed_runs"] = summary.failed;
  write_file(config.output / kManifestFile, manifest.dump(2) + '\n');
  fs::remove_all(scratch);
  return summary;
}

}  // namespace spwc
