#pragma once

// Sequential task training with quadratic consolidation penalties.
//
// For the self-paced methods each incoming task first probes the inherited
// model on every past task's retained eval subset, turns those accuracies
// into priority weights once, then minimizes
//   CE(task) + sum_t strength * v_t * Importance_t .* (theta - theta*_t)^2
// by minibatch SGD with momentum. Snapshots with v_t = 0 are never read.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spwc/importance.hpp"
#include "spwc/metrics.hpp"
#include "spwc/mlp.hpp"
#include "spwc/rng.hpp"
#include "spwc/self_paced.hpp"
#include "spwc/task_stream.hpp"

namespace spwc {

enum class MethodTag { finetune, joint, ewc, online_ewc, mas, sp_ewc, sp_mas };

std::string to_string(MethodTag tag);
MethodTag parse_method_tag(const std::string& text);

struct SelfPacedSettings {
  RegularizerKind kind = RegularizerKind::proposed;
  MuPolicy mu_policy;
};

struct Method {
  MethodTag tag = MethodTag::finetune;
  double lambda = 0.0;        // EWC family (ewc, online_ewc, sp_ewc)
  double gamma = 0.0;         // MAS family (mas, sp_mas)
  double online_decay = 1.0;  // online_ewc accumulation factor
  std::optional<SelfPacedSettings> sp;

  /// Throws UsageError unless sp is set exactly for sp_ewc / sp_mas and strengths are >= 0.
  void validate() const;
  bool self_paced() const noexcept { return tag == MethodTag::sp_ewc || tag == MethodTag::sp_mas; }
  bool keeps_snapshots() const noexcept {
    return tag == MethodTag::ewc || tag == MethodTag::mas || self_paced();
  }
  double strength() const noexcept;
};

enum class PenaltyFamily { ewc, mas };

PenaltyFamily family_of(MethodTag tag);

struct TrainingOptions {
  std::size_t epochs = 10;
  std::size_t batch_size = 128;
  double lr = 1e-2;
  double momentum = 0.9;
  std::size_t importance_samples = 1000;  // sample cap for Fisher / MAS
};

struct PenaltyResult {
  double value = 0.0;
  std::size_t snapshots_touched = 0;
};

/// Adds the penalty gradient into `grad` and returns the penalty value.
///   ewc family: value sum_t (strength/2) v_t G_t (theta - theta*_t)^2, grad strength v_t G_t (theta - theta*_t)
///   mas family: value sum_t strength v_t O_t (theta - theta*_t)^2,     grad 2 strength v_t O_t (theta - theta*_t)
/// Snapshots with v_t == 0 are skipped without touching their data.
PenaltyResult accumulate_penalty(const ParamVector& theta, std::span<const TaskSnapshot> snapshots,
                                 std::span<const double> v, double strength, PenaltyFamily family,
                                 ParamVector& grad);

/// Gradient half of accumulate_penalty, one fused pass per touched snapshot.
/// Returns the number of snapshots touched.
std::size_t accumulate_penalty_grad(const ParamVector& theta, std::span<const TaskSnapshot> snapshots,
                                    std::span<const double> v, double strength, PenaltyFamily family,
                                    ParamVector& grad);

struct PenaltyAndGrad {
  double penalty = 0.0;
  ParamVector grad;
  std::size_t snapshots_touched = 0;
};

PenaltyAndGrad penalty_and_grad(const ParamVector& theta, std::span<const TaskSnapshot> snapshots,
                                std::span<const double> v, double strength, PenaltyFamily family);

/// Penalty value only.
double penalty_value(const ParamVector& theta, std::span<const TaskSnapshot> snapshots,
                     std::span<const double> v, double strength, PenaltyFamily family);

/// l_t = sum_i (lambda/2) G_t,i (theta_i - theta*_t,i)^2. Diagnostic only.
double weighted_distance(const ParamVector& theta, const TaskSnapshot& snapshot, double lambda);

enum class Split { train, valid, test, eval_subset };

/// Fraction of argmax predictions equal to the label.
double evaluate_accuracy(const MlpModel& model, const Dataset& data, std::size_t head);
double evaluate_accuracy(const MlpModel& model, const Task& task, Split split);

struct EpochRecord {
  std::size_t epoch = 0;   // 1-based
  double objective = 0.0;  // ce + penalty on the full training set after the epoch
  double ce = 0.0;
  double penalty = 0.0;
  double sp_term = 0.0;    // self-paced regularizer value (constant within a stage)
};

struct StageRecord {
  std::size_t stage = 0;  // 1-based
  std::size_t task_id = 0;
  // One entry per past task, in task order.
  std::vector<double> psi;
  std::vector<double> eta;
  std::vector<double> v;
  std::vector<double> distance;  // l_t at the start of the stage
  double mu = 0.0;               // resolved age (self-paced methods)
  std::size_t retained = 0;      // snapshots with v > 0 in this stage's penalty
  std::size_t stored = 0;        // snapshots held in memory during this stage
  std::vector<EpochRecord> epochs;
  std::uint64_t steps = 0;
  std::uint64_t snapshots_touched = 0;  // summed over steps
  std::uint64_t min_touched_per_step = 0;
  std::uint64_t max_touched_per_step = 0;
  std::vector<double> test_accuracy;  // accuracy matrix row
  double apa = 0.0;
  double acf = 0.0;
  double ps_active = 0.0;
  double ps_total = 0.0;
  std::uint64_t eval_subset_rows = 0;  // rows retained for accuracy probes
  double seconds = 0.0;
  std::vector<std::string> warnings;
};

struct ContinualState {
  ContinualState(MlpModel initial_model, Rng training_rng);

  MlpModel model;
  std::vector<TaskSnapshot> snapshots;
  std::optional<TaskSnapshot> consolidated;  // online_ewc single term
  struct Seen {
    std::size_t task_id;
    std::size_t head;
    std::shared_ptr<const Dataset> eval_subset;
  };
  std::vector<Seen> seen;  // training order
  struct Retained {
    std::size_t head;
    Dataset data;
  };
  std::vector<Retained> joint_buffer;
  AccuracyMatrix accuracy;
  StorageLedger ledger_active;
  StorageLedger ledger_total;
  std::vector<StageRecord> stages;
  Rng rng;
};

/// Trains one task and appends its StageRecord (accuracy row not yet filled).
void learn_task(ContinualState& state, const Task& task, const Method& method,
                const TrainingOptions& options);

/// Architecture: relu trunk of `hidden` widths over the tasks' input width,
/// one head per task sized by its class map.
MlpModel make_stream_model(std::span<const Task> tasks, std::span<const std::size_t> hidden);

/// learn_task over the stream, filling the accuracy matrix (full test splits)
/// and per-stage metrics after every task.
/// `on_stage` (optional) sees the state after each completed stage, so a
/// caller can persist partial results before a later stage fails.
ContinualState run_stream(std::span<const Task> tasks, const Method& method,
                          const TrainingOptions& options, std::span<const std::size_t> hidden,
                          std::uint64_t seed,
                          const std::function<void(const ContinualState&)>& on_stage = {});

}  // namespace spwc
