#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace spwc {

/// a(i, j): test accuracy on task j after training task i (0-based, j <= i).
class AccuracyMatrix {
 public:
  /// Row i must hold exactly i+1 entries in [0,1].
  void append_row(std::vector<double> row);
  double at(std::size_t stage, std::size_t task) const;
  std::size_t stages() const noexcept { return rows_.size(); }
  std::span<const double> row(std::size_t stage) const;

 private:
  std::vector<std::vector<double>> rows_;
};

/// Stage arguments below are 1-based (stage m = after training m tasks).

/// Mean accuracy over the m tasks seen at stage m.
double apa(const AccuracyMatrix& matrix, std::size_t stage);

/// Mean drop from each earlier task's just-trained accuracy to its accuracy at
/// stage m; 0 for m = 1. Negative values (backward transfer) are kept.
double acf(const AccuracyMatrix& matrix, std::size_t stage);

/// Retained parameter count Prams(Theta_t) per stage, exact integers.
struct StorageLedger {
  std::vector<std::uint64_t> prams;

  /// One block = a parameter vector plus its importance vector (2N values).
  /// Stage footprint = (1 + retained snapshots) blocks: the live model with
  /// the importance it produces, plus every snapshot kept for consolidation.
  static std::uint64_t footprint(std::uint64_t parameter_count, std::uint64_t retained_snapshots) {
    return 2 * parameter_count * (1 + retained_snapshots);
  }
};

/// min(1, (1/m) sum_{t<=m} Prams(1)/Prams(t)).
double ps(const StorageLedger& ledger, std::size_t stage);

/// Arithmetic mean over stages.
double stream_average(std::span<const double> per_stage);

}  // namespace spwc
