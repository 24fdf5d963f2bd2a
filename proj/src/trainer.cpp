#include "spwc/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "spwc/errors.hpp"

namespace spwc {

namespace {

struct TagName {
  MethodTag tag;
  const char* name;
};

constexpr TagName kTagNames[] = {
    {MethodTag::finetune, "finetune"}, {MethodTag::joint, "joint"},
    {MethodTag::ewc, "ewc"},           {MethodTag::online_ewc, "online_ewc"},
    {MethodTag::mas, "mas"},           {MethodTag::sp_ewc, "sp_ewc"},
    {MethodTag::sp_mas, "sp_mas"},
};

bool finite_nonnegative(double x) { return std::isfinite(x) && x >= 0.0; }

// A source of training rows for one head.
struct Source {
  const Dataset* data;
  std::size_t head;
};

struct RowRef {
  std::uint32_t source;
  std::uint32_t row;
};

double full_ce(const MlpModel& model, std::span<const Source> sources) {
  double weighted = 0.0;
  std::size_t total = 0;
  for (const Source& s : sources) {
    const std::size_t n = s.data->size();
    weighted += ce_loss(model, s.data->inputs, s.data->labels, s.head) * static_cast<double>(n);
    total += n;
  }
  return weighted / static_cast<double>(total);
}

}  // namespace

std::string to_string(MethodTag tag) {
  for (const auto& entry : kTagNames) {
    if (entry.tag == tag) return entry.name;
  }
  throw UsageError("unknown method tag");
}

MethodTag parse_method_tag(const std::string& text) {
  for (const auto& entry : kTagNames) {
    if (text == entry.name) return entry.tag;
  }
  throw UsageError("unknown method '" + text +
                   "' (expected finetune, joint, ewc, online_ewc, mas, sp_ewc or sp_mas)");
}

void Method::validate() const {
  if (self_paced() != sp.has_value()) {
    throw UsageError("method " + to_string(tag) +
                     (self_paced() ? " needs self-paced settings" : " takes no self-paced settings"));
  }
  if (!finite_nonnegative(lambda)) throw UsageError("lambda must be finite and >= 0");
  if (!finite_nonnegative(gamma)) throw UsageError("gamma must be finite and >= 0");
  if (!(online_decay >= 0.0 && online_decay <= 1.0)) {
    throw UsageError("online_decay must lie in [0,1]");
  }
  if (sp) {
    const MuPolicy& p = sp->mu_policy;
    if (!std::isfinite(p.value)) throw UsageError("mu policy value must be finite");
    if (p.kind == MuPolicy::Kind::fixed && !(p.value > 0.0)) {
      throw UsageError("fixed mu must be > 0");
    }
    if (p.kind == MuPolicy::Kind::quantile && !(p.value >= 0.0 && p.value <= 1.0)) {
      throw UsageError("quantile rho must lie in [0,1]");
    }
    if (p.kind == MuPolicy::Kind::topk && (p.value < 0.0 || p.value != std::floor(p.value))) {
      throw UsageError("topk k must be a nonnegative integer");
    }
  }
}

double Method::strength() const noexcept {
  switch (tag) {
    case MethodTag::ewc:
    case MethodTag::online_ewc:
    case MethodTag::sp_ewc:
      return lambda;
    case MethodTag::mas:
    case MethodTag::sp_mas:
      return gamma;
    default:
      return 0.0;
  }
}

PenaltyFamily family_of(MethodTag tag) {
  return (tag == MethodTag::mas || tag == MethodTag::sp_mas) ? PenaltyFamily::mas
                                                              : PenaltyFamily::ewc;
}

PenaltyResult accumulate_penalty(const ParamVector& theta, std::span<const TaskSnapshot> snapshots,
                                 std::span<const double> v, double strength, PenaltyFamily family,
                                 ParamVector& grad) {
  if (snapshots.size() != v.size()) throw StructuralError("penalty: one weight per snapshot required");
  if (grad.size() != theta.size()) throw StructuralError("penalty: gradient length mismatch");
  PenaltyResult result;
  const double value_scale = family == PenaltyFamily::ewc ? 0.5 * strength : strength;
  const double grad_scale = family == PenaltyFamily::ewc ? strength : 2.0 * strength;
  for (std::size_t t = 0; t < snapshots.size(); ++t) {
    if (v[t] == 0.0) continue;
    const TaskSnapshot& s = snapshots[t];
    if (s.theta_star.size() != theta.size() || s.importance.values.size() != theta.size()) {
      throw StructuralError("penalty: snapshot length does not match the model");
    }
    const auto diff = theta.array() - s.theta_star.array();
    const auto weighted = s.importance.values.array() * diff;
    result.value += value_scale * v[t] * (weighted * diff).sum();
    grad.array() += (grad_scale * v[t]) * weighted;
    ++result.snapshots_touched;
  }
  return result;
}

std::size_t accumulate_penalty_grad(const ParamVector& theta, std::span<const TaskSnapshot> snapshots,
                                    std::span<const double> v, double strength, PenaltyFamily family,
                                    ParamVector& grad) {
  if (snapshots.size() != v.size()) throw StructuralError("penalty: one weight per snapshot required");
  if (grad.size() != theta.size()) throw StructuralError("penalty: gradient length mismatch");
  const double grad_scale = family == PenaltyFamily::ewc ? strength : 2.0 * strength;
  const Eigen::Index n = theta.size();
  std::size_t touched = 0;
  for (std::size_t t = 0; t < snapshots.size(); ++t) {
    if (v[t] == 0.0) continue;
    const TaskSnapshot& s = snapshots[t];
    if (s.theta_star.size() != n || s.importance.values.size() != n) {
      throw StructuralError("penalty: snapshot length does not match the model");
    }
    const double c = grad_scale * v[t];
    const double* th = theta.data();
    const double* star = s.theta_star.data();
    const double* imp = s.importance.values.data();
    double* g = grad.data();
    for (Eigen::Index i = 0; i < n; ++i) g[i] += c * (imp[i] * (th[i] - star[i]));
    ++touched;
  }
  return touched;
}

PenaltyAndGrad penalty_and_grad(const ParamVector& theta, std::span<const TaskSnapshot> snapshots,
                                std::span<const double> v, double strength, PenaltyFamily family) {
  PenaltyAndGrad out;
  out.grad = ParamVector::Zero(theta.size());
  const PenaltyResult r = accumulate_penalty(theta, snapshots, v, strength, family, out.grad);
  out.penalty = r.value;
  out.snapshots_touched = r.snapshots_touched;
  return out;
}

double penalty_value(const ParamVector& theta, std::span<const TaskSnapshot> snapshots,
                     std::span<const double> v, double strength, PenaltyFamily family) {
  if (snapshots.size() != v.size()) throw StructuralError("penalty: one weight per snapshot required");
  const double value_scale = family == PenaltyFamily::ewc ? 0.5 * strength : strength;
  double value = 0.0;
  for (std::size_t t = 0; t < snapshots.size(); ++t) {
    if (v[t] == 0.0) continue;
    const auto diff = theta.array() - snapshots[t].theta_star.array();
    value += value_scale * v[t] * (snapshots[t].importance.values.array() * diff.square()).sum();
  }
  return value;
}

double weighted_distance(const ParamVector& theta, const TaskSnapshot& snapshot, double lambda) {
  if (snapshot.theta_star.size() != theta.size() ||
      snapshot.importance.values.size() != theta.size()) {
    throw StructuralError("distance: snapshot length does not match the model");
  }
  const auto diff = theta.array() - snapshot.theta_star.array();
  return 0.5 * lambda * (snapshot.importance.values.array() * diff.square()).sum();
}

double evaluate_accuracy(const MlpModel& model, const Dataset& data, std::size_t head) {
  if (data.size() == 0) throw UsageError("accuracy of an empty dataset");
  const std::vector<Label> predicted = predict(model, data.inputs, head);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == data.labels[i];
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

double evaluate_accuracy(const MlpModel& model, const Task& task, Split split) {
  switch (split) {
    case Split::train:
      return evaluate_accuracy(model, task.train, task.head_id);
    case Split::valid:
      return evaluate_accuracy(model, task.valid, task.head_id);
    case Split::test:
      return evaluate_accuracy(model, task.test, task.head_id);
    case Split::eval_subset:
      if (!task.eval_subset) throw UsageError("task has no eval subset");
      return evaluate_accuracy(model, *task.eval_subset, task.head_id);
  }
  throw UsageError("unknown split");
}

ContinualState::ContinualState(MlpModel initial_model, Rng training_rng)
    : model(std::move(initial_model)), rng(std::move(training_rng)) {}


void learn_task(ContinualState& state, const Task& task, const Method& method,
                const TrainingOptions& options) {
  method.validate();
  if (options.epochs == 0 || options.batch_size == 0) {
    throw UsageError("epochs and batch_size must be positive");
  }
  if (!(options.lr > 0.0) || !std::isfinite(options.lr)) throw UsageError("lr must be > 0");
  if (!(options.momentum >= 0.0 && options.momentum < 1.0)) {
    throw UsageError("momentum must lie in [0,1)");
  }
  if (options.importance_samples == 0) throw UsageError("importance_samples must be positive");
  if (task.head_id >= state.model.head_count()) {
    throw LookupError("task " + std::to_string(task.task_id) + " uses head " +
                      std::to_string(task.head_id) + " but the model has " +
                      std::to_string(state.model.head_count()));
  }
  for (const auto& seen : state.seen) {
    if (seen.task_id == task.task_id) {
      throw UsageError("task " + std::to_string(task.task_id) + " was already learned");
    }
  }
  if (task.train.size() == 0) throw UsageError("task " + std::to_string(task.task_id) + " has no training rows");
  if (task.train.dim() != state.model.input_width()) {
    throw StructuralError("task input width " + std::to_string(task.train.dim()) +
                          " does not match the model input width " +
                          std::to_string(state.model.input_width()));
  }
  if (!task.eval_subset || task.eval_subset->size() == 0) {
    throw UsageError("task " + std::to_string(task.task_id) + " has no eval subset");
  }

  const auto started = std::chrono::steady_clock::now();
  const double strength = method.strength();
  const PenaltyFamily family = family_of(method.tag);
  StageRecord record;
  record.stage = state.stages.size() + 1;
  record.task_id = task.task_id;

  // Probe every past task with the inherited model before any step.
  for (const auto& seen : state.seen) {
    const double psi = evaluate_accuracy(state.model, *seen.eval_subset, seen.head);
    record.psi.push_back(psi);
    record.eta.push_back(difficulty(psi));
  }

  std::span<const TaskSnapshot> penalty_snapshots;
  std::vector<double> penalty_v;
  if (method.keeps_snapshots()) {
    for (std::size_t t = 0; t < state.snapshots.size(); ++t) {
      state.snapshots[t].psi = record.psi[t];
      record.distance.push_back(weighted_distance(state.model.parameters(), state.snapshots[t], strength));
    }
    penalty_snapshots = state.snapshots;
    if (method.self_paced()) {
      if (!state.snapshots.empty()) {
        PriorityWeights weights = weight_vector(record.psi, method.sp->mu_policy, method.sp->kind);
        record.v = weights.v;
        record.mu = weights.mu;
        record.warnings = std::move(weights.warnings);
      }
    } else {
      record.v.assign(state.snapshots.size(), 1.0);
    }
    penalty_v = record.v;
  } else if (method.tag == MethodTag::online_ewc && state.consolidated) {
    penalty_snapshots = std::span<const TaskSnapshot>(&*state.consolidated, 1);
    penalty_v.assign(1, 1.0);
  }
  record.stored = method.tag == MethodTag::online_ewc ? (state.consolidated ? 1 : 0)
                                                      : state.snapshots.size();
  record.retained = static_cast<std::size_t>(
      std::count_if(penalty_v.begin(), penalty_v.end(), [](double x) { return x > 0.0; }));
  const bool penalized = strength > 0.0 && record.retained > 0;
  const double sp_term = (method.self_paced() && !record.v.empty())
                             ? regularizer_value(record.v, method.sp->kind, record.mu)
                             : 0.0;

  // Training rows: the current task, or the whole retained buffer for joint.
  std::vector<Source> sources;
  if (method.tag == MethodTag::joint) {
    state.joint_buffer.push_back({task.head_id, task.train});
    for (const auto& retained : state.joint_buffer) sources.push_back({&retained.data, retained.head});
  } else {
    sources.push_back({&task.train, task.head_id});
  }
  std::vector<RowRef> order;
  for (std::size_t s = 0; s < sources.size(); ++s) {
    for (std::size_t r = 0; r < sources[s].data->size(); ++r) {
      order.push_back({static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(r)});
    }
  }

  ParamVector& theta = state.model.parameters();
  ParamVector velocity = ParamVector::Zero(theta.size());
  ParamVector grad(theta.size());
  std::vector<std::size_t> group_rows;
  Batch batch;
  record.min_touched_per_step = std::numeric_limits<std::uint64_t>::max();
  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    state.rng.shuffle(std::span<RowRef>(order));
    for (std::size_t begin = 0; begin < order.size(); begin += options.batch_size) {
      const std::size_t end = std::min(order.size(), begin + options.batch_size);
      const double batch_rows = static_cast<double>(end - begin);
      grad.setZero();
      for (std::size_t s = 0; s < sources.size(); ++s) {
        group_rows.clear();
        for (std::size_t i = begin; i < end; ++i) {
          if (order[i].source == s) group_rows.push_back(order[i].row);
        }
        if (group_rows.empty()) continue;
        const Dataset& data = *sources[s].data;
        batch.head = sources[s].head;
        batch.inputs.resize(static_cast<Eigen::Index>(group_rows.size()), data.inputs.cols());
        batch.labels.resize(group_rows.size());
        for (std::size_t i = 0; i < group_rows.size(); ++i) {
          batch.inputs.row(static_cast<Eigen::Index>(i)) = data.inputs.row(static_cast<Eigen::Index>(group_rows[i]));
          batch.labels[i] = data.labels[group_rows[i]];
        }
        accumulate_ce_grad(state.model, batch, static_cast<double>(group_rows.size()) / batch_rows, grad);
      }
      std::uint64_t touched = 0;
      if (penalized) {
        touched = accumulate_penalty_grad(theta, penalty_snapshots, penalty_v, strength, family, grad);
      }
      sgd_momentum_step(theta, grad, velocity, options.lr, options.momentum);
      ++record.steps;
      record.snapshots_touched += touched;
      record.min_touched_per_step = std::min(record.min_touched_per_step, touched);
      record.max_touched_per_step = std::max(record.max_touched_per_step, touched);
    }

    EpochRecord e;
    e.epoch = epoch;
    e.ce = full_ce(state.model, sources);
    e.penalty = penalized ? penalty_value(theta, penalty_snapshots, penalty_v, strength, family) : 0.0;
    e.objective = e.ce + e.penalty;
    e.sp_term = sp_term;
    if (!std::isfinite(e.objective)) {
      throw NumericError("non-finite objective at stage " + std::to_string(record.stage) +
                         ", epoch " + std::to_string(epoch));
    }
    record.epochs.push_back(e);
  }

  // Freeze the finished task.
  if (method.keeps_snapshots() || method.tag == MethodTag::online_ewc) {
    TaskSnapshot snapshot;
    snapshot.task_id = task.task_id;
    snapshot.theta_star = theta;
    snapshot.importance =
        family == PenaltyFamily::mas
            ? mas_importance(state.model, task.train, task.head_id, options.importance_samples)
            : fisher_diagonal(state.model, task.train, task.head_id, options.importance_samples);
    snapshot.eval_subset = task.eval_subset;
    snapshot.psi = evaluate_accuracy(state.model, *task.eval_subset, task.head_id);
    if (method.tag == MethodTag::online_ewc) {
      if (state.consolidated) {
        snapshot.importance = online_ewc_accumulate(state.consolidated->importance,
                                                    snapshot.importance, method.online_decay);
      }
      state.consolidated = std::move(snapshot);
    } else {
      state.snapshots.push_back(std::move(snapshot));
    }
  }
  state.seen.push_back({task.task_id, task.head_id, task.eval_subset});
  for (const auto& seen : state.seen) record.eval_subset_rows += seen.eval_subset->size();

  const std::uint64_t n = theta.size();
  state.ledger_active.prams.push_back(StorageLedger::footprint(n, record.retained));
  state.ledger_total.prams.push_back(StorageLedger::footprint(n, record.stored));
  if (record.steps == 0) record.min_touched_per_step = 0;
  record.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  state.stages.push_back(std::move(record));
}

MlpModel make_stream_model(std::span<const Task> tasks, std::span<const std::size_t> hidden) {
  if (tasks.empty()) throw UsageError("empty task stream");
  const std::size_t width = tasks.front().train.dim();
  std::size_t heads = 0;
  for (const Task& t : tasks) {
    if (t.train.dim() != width) throw StructuralError("tasks disagree on input width");
    heads = std::max(heads, t.head_id + 1);
  }
  std::vector<std::size_t> head_widths(heads, 0);
  for (const Task& t : tasks) {
    const std::size_t w = t.class_map.size();
    if (w == 0) throw StructuralError("task " + std::to_string(t.task_id) + " has no classes");
    if (head_widths[t.head_id] != 0 && head_widths[t.head_id] != w) {
      throw StructuralError("tasks sharing head " + std::to_string(t.head_id) +
                            " disagree on its width");
    }
    head_widths[t.head_id] = w;
  }
  for (std::size_t h = 0; h < heads; ++h) {
    if (head_widths[h] == 0) throw StructuralError("head " + std::to_string(h) + " has no task");
  }
  return MlpModel(width, hidden, head_widths);
}

ContinualState run_stream(std::span<const Task> tasks, const Method& method,
                          const TrainingOptions& options, std::span<const std::size_t> hidden,
                          std::uint64_t seed,
                          const std::function<void(const ContinualState&)>& on_stage) {
  method.validate();
  const Rng root(seed);
  MlpModel model = make_stream_model(tasks, hidden);
  Rng init = root.derive(1);
  model.initialize(init);
  ContinualState state(std::move(model), root.derive(2));
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    learn_task(state, tasks[i], method, options);
    std::vector<double> row;
    row.reserve(i + 1);
    for (std::size_t t = 0; t <= i; ++t) row.push_back(evaluate_accuracy(state.model, tasks[t], Split::test));
    state.accuracy.append_row(row);
    StageRecord& record = state.stages.back();
    record.test_accuracy = std::move(row);
    record.apa = apa(state.accuracy, i + 1);
    record.acf = acf(state.accuracy, i + 1);
    record.ps_active = ps(state.ledger_active, i + 1);
    record.ps_total = ps(state.ledger_total, i + 1);
    if (on_stage) on_stage(state);
  }
  return state;
}

}  // namespace spwc
