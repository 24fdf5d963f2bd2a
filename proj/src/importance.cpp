#include "spwc/importance.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <istream>
#include <ostream>

namespace spwc {
namespace {

constexpr Eigen::Index kChunk = 256;

enum class Reduction { squared, absolute };

// Sums per-sample gradient statistics over the first `n` rows without
// materializing per-sample gradients: for a dense layer the per-sample weight
// gradient is delta_s a_s^T, so sum_s (delta_s a_s^T)^2 = (D.^2)^T (A.^2) and
// sum_s |delta_s a_s^T| = |D|^T |A|.
template <typename OutputGrad>
ParamVector per_sample_statistic(const MlpModel& model, const Dataset& data, std::size_t head,
                                 std::size_t n, Reduction reduction, OutputGrad&& output_grad) {
  ParamVector total = ParamVector::Zero(model.parameters().size());
  for (Eigen::Index start = 0; start < static_cast<Eigen::Index>(n); start += kChunk) {
    const Eigen::Index rows = std::min(kChunk, static_cast<Eigen::Index>(n) - start);
    const Matrix inputs = data.inputs.middleRows(start, rows);
    const ForwardPass pass = forward_pass(model, inputs, head);
    Matrix delta = output_grad(pass.logits, static_cast<std::size_t>(start));
    backpropagate(model, pass, head, std::move(delta),
                  [&](const DenseLayout& layer, const Matrix& d, const Matrix& a) {
                    Eigen::Map<Matrix> w(total.data() + layer.offset,
                                         static_cast<Eigen::Index>(layer.out),
                                         static_cast<Eigen::Index>(layer.in));
                    auto b = total.segment(static_cast<Eigen::Index>(layer.offset + layer.weight_count()),
                                           static_cast<Eigen::Index>(layer.out));
                    if (reduction == Reduction::squared) {
                      const Matrix d2 = d.array().square().matrix();
                      w.noalias() += d2.transpose() * a.array().square().matrix();
                      b += d2.colwise().sum().transpose();
                    } else {
                      const Matrix d1 = d.cwiseAbs();
                      w.noalias() += d1.transpose() * a.cwiseAbs();
                      b += d1.colwise().sum().transpose();
                    }
                  });
  }
  total /= static_cast<double>(n);
  if (!total.allFinite()) throw NumericError("importance estimate is not finite");
  return total;
}

std::size_t effective_count(const Dataset& data, std::size_t sample_cap, const char* who) {
  if (data.size() == 0) throw UsageError(std::string(who) + ": empty dataset");
  if (sample_cap == 0) throw UsageError(std::string(who) + ": sample_cap must be positive");
  return std::min(sample_cap, data.size());
}

void put_u64(std::ostream& out, std::uint64_t v) {
  std::array<char, 8> bytes{};
  for (int i = 0; i < 8; ++i) bytes[static_cast<std::size_t>(i)] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(bytes.data(), 8);
}

std::uint64_t get_u64(std::istream& in) {
  std::array<unsigned char, 8> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), 8);
  if (!in) throw FormatError("snapshot sidecar truncated at offset " + std::to_string(in.gcount()));
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | bytes[static_cast<std::size_t>(i)];
  return v;
}

void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }
double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }

void put_vector(std::ostream& out, const ParamVector& v) {
  put_u64(out, static_cast<std::uint64_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) put_f64(out, v[i]);
}

ParamVector get_vector(std::istream& in) {
  const auto n = get_u64(in);
  if (n > (std::uint64_t{1} << 40)) throw FormatError("snapshot sidecar: implausible length");
  ParamVector v(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = get_f64(in);
  return v;
}

constexpr char kSnapshotMagic[8] = {'S', 'P', 'W', 'C', 'S', 'N', 'A', 'P'};

}  // namespace

ImportanceVector fisher_diagonal(const MlpModel& model, const Dataset& data, std::size_t head,
                                 std::size_t sample_cap) {
  const std::size_t n = effective_count(data, sample_cap, "fisher_diagonal");
  auto grad_log_likelihood = [&](const Matrix& logits, std::size_t first_row) {
    Matrix delta = softmax_rows(logits);
    for (Eigen::Index r = 0; r < delta.rows(); ++r) {
      const Label y = data.labels[first_row + static_cast<std::size_t>(r)];
      if (y >= static_cast<Label>(delta.cols())) throw UsageError("fisher_diagonal: label outside head");
      delta(r, y) -= 1.0;
    }
    return delta;
  };
  return {per_sample_statistic(model, data, head, n, Reduction::squared, grad_log_likelihood),
          ImportanceKind::fisher};
}

ImportanceVector mas_importance(const MlpModel& model, const Dataset& data, std::size_t head,
                                std::size_t sample_cap) {
  const std::size_t n = effective_count(data, sample_cap, "mas_importance");
  // d(0.5 ||z||^2)/dz = z
  auto grad_half_norm = [](const Matrix& logits, std::size_t) { return logits; };
  return {per_sample_statistic(model, data, head, n, Reduction::absolute, grad_half_norm),
          ImportanceKind::mas};
}

ImportanceVector online_ewc_accumulate(const ImportanceVector& prev,
                                       const ImportanceVector& fresh, double gamma) {
  if (prev.values.size() != fresh.values.size()) {
    throw StructuralError("online_ewc_accumulate: length mismatch");
  }
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw UsageError("online_ewc_accumulate: gamma outside [0,1]");
  return {gamma * prev.values + fresh.values, fresh.kind};
}

void write_snapshot(std::ostream& out, const TaskSnapshot& snapshot) {
  if (snapshot.theta_star.size() != snapshot.importance.values.size()) {
    throw StructuralError("write_snapshot: theta_star and importance lengths differ");
  }
  out.write(kSnapshotMagic, 8);
  const std::uint32_t version = 1;
  for (int i = 0; i < 4; ++i) out.put(static_cast<char>((version >> (8 * i)) & 0xFF));
  put_u64(out, snapshot.task_id);
  out.put(static_cast<char>(snapshot.importance.kind));
  put_f64(out, snapshot.psi);
  put_vector(out, snapshot.theta_star);
  put_vector(out, snapshot.importance.values);
}

TaskSnapshot read_snapshot(std::istream& in) {
  char magic[8] = {};
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kSnapshotMagic, 8) != 0) {
    throw FormatError("snapshot sidecar: bad magic at offset 0");
  }
  std::uint32_t version = 0;
  for (int i = 0; i < 4; ++i) version |= static_cast<std::uint32_t>(static_cast<unsigned char>(in.get())) << (8 * i);
  if (!in || version != 1) throw FormatError("snapshot sidecar: unsupported version at offset 8");
  TaskSnapshot snap;
  snap.task_id = get_u64(in);
  const int kind = in.get();
  if (kind != 0 && kind != 1) throw FormatError("snapshot sidecar: bad importance kind at offset 20");
  snap.importance.kind = static_cast<ImportanceKind>(kind);
  snap.psi = get_f64(in);
  snap.theta_star = get_vector(in);
  snap.importance.values = get_vector(in);
  if (snap.theta_star.size() != snap.importance.values.size()) {
    throw FormatError("snapshot sidecar: theta_star and importance lengths differ");
  }
  return snap;
}

}  // namespace spwc
