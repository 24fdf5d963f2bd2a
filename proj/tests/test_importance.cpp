#include <doctest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "spwc/errors.hpp"
#include "spwc/importance.hpp"

using namespace spwc;

namespace {

Dataset gaussian_rows(std::size_t n, std::size_t d, std::size_t classes, Rng& rng) {
  Dataset data;
  data.inputs.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < data.inputs.size(); ++i) data.inputs.data()[i] = rng.normal();
  for (std::size_t i = 0; i < n; ++i) data.labels.push_back(static_cast<Label>(rng.below(classes)));
  data.num_classes = classes;
  return data;
}

MlpModel random_model(Rng& rng) {
  const std::size_t hidden[] = {7, 5};
  const std::size_t heads[] = {3, 4};
  MlpModel model(6, hidden, heads);
  model.initialize(rng);
  for (Eigen::Index i = 0; i < model.parameters().size(); ++i) model.parameters()[i] += 0.1 * rng.normal();
  return model;
}

Batch single(const Dataset& data, std::size_t row, std::size_t head) {
  Batch b;
  b.inputs = data.inputs.row(static_cast<Eigen::Index>(row));
  b.labels = {data.labels[row]};
  b.head = head;
  return b;
}

// Independent per-sample routes: one backward pass per row.
ParamVector naive_fisher(const MlpModel& model, const Dataset& data, std::size_t head, std::size_t cap) {
  const std::size_t n = std::min(cap, data.size());
  ParamVector sum = ParamVector::Zero(model.parameters().size());
  for (std::size_t s = 0; s < n; ++s) sum += ce_loss_and_grad(model, single(data, s, head)).grad.array().square().matrix();
  return sum / static_cast<double>(n);
}

ParamVector naive_mas(const MlpModel& model, const Dataset& data, std::size_t head, std::size_t cap) {
  const std::size_t n = std::min(cap, data.size());
  ParamVector sum = ParamVector::Zero(model.parameters().size());
  for (std::size_t s = 0; s < n; ++s) {
    const Matrix x = data.inputs.row(static_cast<Eigen::Index>(s));
    const ForwardPass pass = forward_pass(model, x, head);
    ParamVector g = ParamVector::Zero(model.parameters().size());
    backpropagate(model, pass, head, pass.logits, [&](const DenseLayout& layer, const Matrix& delta, const Matrix& in) {
      const Matrix w = delta.transpose() * in;
      for (std::size_t k = 0; k < layer.weight_count(); ++k) g[static_cast<Eigen::Index>(layer.offset + k)] = w.data()[k];
      for (std::size_t k = 0; k < layer.out; ++k)
        g[static_cast<Eigen::Index>(layer.offset + layer.weight_count() + k)] = delta(0, static_cast<Eigen::Index>(k));
    });
    sum += g.cwiseAbs();
  }
  return sum / static_cast<double>(n);
}

double max_rel(const ParamVector& a, const ParamVector& b) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max({std::abs(a[i]), std::abs(b[i]), 1e-300}));
  }
  return worst;
}

}  // namespace

TEST_CASE("Fisher diagonal matches the per-sample squared-gradient mean") {
  Rng rng(11);
  for (int instance = 0; instance < 5; ++instance) {
    const MlpModel model = random_model(rng);
    const Dataset data = gaussian_rows(30, 6, 4, rng);
    const ImportanceVector f = fisher_diagonal(model, data, 1, 1000);
    CHECK(f.kind == ImportanceKind::fisher);
    REQUIRE(f.values.size() == model.parameters().size());
    CHECK(max_rel(f.values, naive_fisher(model, data, 1, 1000)) < 1e-9);
    CHECK(f.values.minCoeff() >= 0.0);
    // Sample cap uses the first rows only.
    CHECK(max_rel(fisher_diagonal(model, data, 1, 7).values, naive_fisher(model, data, 1, 7)) < 1e-9);
  }
}

TEST_CASE("MAS importance matches the per-sample absolute-gradient mean") {
  Rng rng(12);
  for (int instance = 0; instance < 5; ++instance) {
    const MlpModel model = random_model(rng);
    const Dataset data = gaussian_rows(25, 6, 3, rng);
    const ImportanceVector m = mas_importance(model, data, 0, 1000);
    CHECK(m.kind == ImportanceKind::mas);
    CHECK(max_rel(m.values, naive_mas(model, data, 0, 1000)) < 1e-9);
    CHECK(m.values.minCoeff() >= 0.0);
  }
}

TEST_CASE("Fisher of a one-input softmax regression by hand") {
  // No trunk, head of 2 classes on 1 input: params w0, w1, b0, b1.
  const std::size_t heads[] = {2};
  MlpModel model(1, std::span<const std::size_t>{}, heads);
  model.parameters() << 0.3, -0.7, 0.1, 0.2;
  Dataset data;
  data.inputs.resize(2, 1);
  data.inputs << 1.5, -2.0;
  data.labels = {0, 1};
  data.num_classes = 2;

  double expected[4] = {0, 0, 0, 0};
  const double w[2] = {0.3, -0.7};
  const double b[2] = {0.1, 0.2};
  for (int s = 0; s < 2; ++s) {
    const double x = data.inputs(s, 0);
    const double z0 = w[0] * x + b[0];
    const double z1 = w[1] * x + b[1];
    const double p0 = 1.0 / (1.0 + std::exp(z1 - z0));
    const double p[2] = {p0, 1.0 - p0};
    for (int k = 0; k < 2; ++k) {
      const double r = (static_cast<int>(data.labels[s]) == k ? 1.0 : 0.0) - p[k];
      expected[k] += 0.5 * (r * x) * (r * x);
      expected[2 + k] += 0.5 * r * r;
    }
  }
  const ImportanceVector f = fisher_diagonal(model, data, 0, 1000);
  for (int i = 0; i < 4; ++i) CHECK(f.values[i] == doctest::Approx(expected[i]).epsilon(1e-10));
}

TEST_CASE("inactive heads get zero importance") {
  Rng rng(13);
  const MlpModel model = random_model(rng);
  const Dataset data = gaussian_rows(10, 6, 3, rng);
  const DenseLayout& other = model.head_layout(1);
  for (const ImportanceVector& imp : {fisher_diagonal(model, data, 0, 100), mas_importance(model, data, 0, 100)}) {
    CHECK(imp.values.segment(static_cast<Eigen::Index>(other.offset), static_cast<Eigen::Index>(other.size())).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("MAS ignores labels and scales with the head") {
  Rng rng(14);
  MlpModel model = random_model(rng);
  Dataset data = gaussian_rows(20, 6, 3, rng);
  const ImportanceVector before = mas_importance(model, data, 0, 100);
  for (auto& y : data.labels) y = (y + 1) % 3;
  CHECK(mas_importance(model, data, 0, 100).values == before.values);

  // Doubling the head's weights and biases doubles the logits, so the head
  // importance scales by 2 (its inputs are unchanged).
  const DenseLayout& head = model.head_layout(0);
  model.parameters().segment(static_cast<Eigen::Index>(head.offset), static_cast<Eigen::Index>(head.size())) *= 2.0;
  const ImportanceVector after = mas_importance(model, data, 0, 100);
  const auto seg = [&](const ImportanceVector& v) {
    return v.values.segment(static_cast<Eigen::Index>(head.offset), static_cast<Eigen::Index>(head.size()));
  };
  CHECK((seg(after) - 2.0 * seg(before)).cwiseAbs().maxCoeff() < 1e-12 * seg(after).cwiseAbs().maxCoeff() + 1e-300);
}

TEST_CASE("online accumulation over three tasks") {
  const double gamma = 0.7;
  ImportanceVector f1{ParamVector::Constant(3, 1.0), ImportanceKind::fisher};
  ImportanceVector f2{ParamVector::Constant(3, 2.0), ImportanceKind::fisher};
  ImportanceVector f3{ParamVector::Constant(3, 5.0), ImportanceKind::fisher};
  const ImportanceVector acc = online_ewc_accumulate(online_ewc_accumulate(f1, f2, gamma), f3, gamma);
  const double expected = gamma * gamma * 1.0 + gamma * 2.0 + 5.0;
  for (Eigen::Index i = 0; i < 3; ++i) CHECK(acc.values[i] == doctest::Approx(expected).epsilon(1e-15));
}

TEST_CASE("snapshot sidecar round trips exactly") {
  Rng rng(15);
  TaskSnapshot s;
  s.task_id = 42;
  s.psi = 0.8125;
  s.theta_star = ParamVector::Random(17);
  s.importance.values = ParamVector::Random(17).cwiseAbs();
  s.importance.kind = ImportanceKind::mas;
  std::stringstream io(std::ios::in | std::ios::out | std::ios::binary);
  write_snapshot(io, s);
  const std::string bytes = io.str();
  CHECK(bytes.substr(0, 8) == "SPWCSNAP");
  CHECK(bytes.size() == 8 + 4 + 8 + 1 + 8 + 2 * (8 + 17 * 8));
  const TaskSnapshot r = read_snapshot(io);
  CHECK(r.task_id == 42);
  CHECK(r.psi == 0.8125);
  CHECK(r.importance.kind == ImportanceKind::mas);
  CHECK(r.theta_star == s.theta_star);
  CHECK(r.importance.values == s.importance.values);

  std::stringstream bad(std::string("NOTSNAPS") + bytes.substr(8));
  CHECK_THROWS_AS(read_snapshot(bad), FormatError);
  std::stringstream cut(bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(read_snapshot(cut), FormatError);
}
