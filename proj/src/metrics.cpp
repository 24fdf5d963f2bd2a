#include "spwc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "spwc/errors.hpp"

namespace spwc {

void AccuracyMatrix::append_row(std::vector<double> row) {
  if (row.size() != rows_.size() + 1) {
    throw StructuralError("accuracy row " + std::to_string(rows_.size()) + " needs " +
                          std::to_string(rows_.size() + 1) + " entries, got " +
                          std::to_string(row.size()));
  }
  for (double a : row) {
    if (!(a >= 0.0 && a <= 1.0)) throw UsageError("accuracy outside [0,1]");
  }
  rows_.push_back(std::move(row));
}

double AccuracyMatrix::at(std::size_t stage, std::size_t task) const {
  if (stage >= rows_.size() || task > stage) throw LookupError("accuracy matrix index out of range");
  return rows_[stage][task];
}

std::span<const double> AccuracyMatrix::row(std::size_t stage) const {
  if (stage >= rows_.size()) throw LookupError("accuracy matrix row out of range");
  return rows_[stage];
}

double apa(const AccuracyMatrix& matrix, std::size_t stage) {
  if (stage == 0 || stage > matrix.stages()) throw LookupError("apa: stage out of range");
  const auto row = matrix.row(stage - 1);
  double sum = 0.0;
  for (double a : row) sum += a;
  return sum / static_cast<double>(stage);
}

double acf(const AccuracyMatrix& matrix, std::size_t stage) {
  if (stage == 0 || stage > matrix.stages()) throw LookupError("acf: stage out of range");
  if (stage == 1) return 0.0;
  double sum = 0.0;
  for (std::size_t t = 0; t + 1 < stage; ++t) sum += matrix.at(t, t) - matrix.at(stage - 1, t);
  return sum / static_cast<double>(stage - 1);
}

double ps(const StorageLedger& ledger, std::size_t stage) {
  if (stage == 0 || stage > ledger.prams.size()) throw LookupError("ps: stage out of range");
  double sum = 0.0;
  for (std::size_t t = 0; t < stage; ++t) {
    if (ledger.prams[t] == 0) throw UsageError("ps: zero parameter count at stage " + std::to_string(t + 1));
    sum += static_cast<double>(ledger.prams[0]) / static_cast<double>(ledger.prams[t]);
  }
  return std::min(1.0, sum / static_cast<double>(stage));
}

double stream_average(std::span<const double> per_stage) {
  if (per_stage.empty()) throw UsageError("stream_average: no stages");
  double sum = 0.0;
  for (double x : per_stage) sum += x;
  return sum / static_cast<double>(per_stage.size());
}

}  // namespace spwc
