#pragma once

#include <cstddef>
#include <iosfwd>
#include <memory>

#include "spwc/mlp.hpp"
#include "spwc/task_stream.hpp"

namespace spwc {

enum class ImportanceKind : std::uint8_t { fisher = 0, mas = 1 };

/// Per-parameter importance aligned index-for-index with the flat parameters.
struct ImportanceVector {
  ParamVector values;
  ImportanceKind kind = ImportanceKind::fisher;
};

/// Frozen record of a finished task.
struct TaskSnapshot {
  std::size_t task_id = 0;
  ParamVector theta_star;
  ImportanceVector importance;
  std::shared_ptr<const Dataset> eval_subset;  // not serialized
  double psi = 0.0;                            // latest probe accuracy
};

/// Empirical diagonal Fisher: mean over the first min(sample_cap, n) samples
/// of the squared per-sample gradient of log p(y_true | x) (true labels).
ImportanceVector fisher_diagonal(const MlpModel& model, const Dataset& data, std::size_t head,
                                 std::size_t sample_cap);

/// MAS importance: mean over the first min(sample_cap, n) samples of
/// |d(0.5 * ||logits(x)||^2) / dTheta|. Labels are ignored.
ImportanceVector mas_importance(const MlpModel& model, const Dataset& data, std::size_t head,
                                std::size_t sample_cap);

/// gamma * prev + fresh.
ImportanceVector online_ewc_accumulate(const ImportanceVector& prev,
                                       const ImportanceVector& fresh, double gamma);

/// Binary sidecar, all integers and floats little-endian:
///   "SPWCSNAP" | u32 version=1 | u64 task_id | u8 kind | f64 psi
///   | u64 N | N x f64 theta_star | u64 N | N x f64 importance
void write_snapshot(std::ostream& out, const TaskSnapshot& snapshot);
TaskSnapshot read_snapshot(std::istream& in);

}  // namespace spwc
