#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "spwc/errors.hpp"
#include "spwc/mlp.hpp"

using namespace spwc;

namespace {

MlpModel random_model(Rng& rng, std::size_t input, std::vector<std::size_t> hidden,
                      std::vector<std::size_t> heads) {
  MlpModel model(input, hidden, heads);
  model.initialize(rng);
  // Nonzero biases keep relu preactivations away from exact zeros.
  for (Eigen::Index i = 0; i < model.parameters().size(); ++i) model.parameters()[i] += 0.1 * rng.normal();
  return model;
}

Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

// Straight-line forward pass over the flat parameter vector.
std::vector<double> naive_logits(const MlpModel& model, const std::vector<double>& x, std::size_t head) {
  const ParamVector& p = model.parameters();
  std::vector<double> a = x;
  auto layer = [&](const DenseLayout& l, bool relu) {
    std::vector<double> out(l.out);
    for (std::size_t o = 0; o < l.out; ++o) {
      double s = p[static_cast<Eigen::Index>(l.offset + l.in * l.out + o)];
      for (std::size_t i = 0; i < l.in; ++i) s += p[static_cast<Eigen::Index>(l.offset + o * l.in + i)] * a[i];
      out[o] = relu ? std::max(0.0, s) : s;
    }
    a = out;
  };
  for (const auto& l : model.trunk()) layer(l, l.activation == Activation::relu);
  layer(model.head_layout(head), false);
  return a;
}

}  // namespace

TEST_CASE("parameter count for the 1024-400-400 trunk with ten 10-way heads") {
  const std::size_t hidden[] = {400, 400};
  const std::vector<std::size_t> heads(10, 10);
  const std::size_t expected = 1024 * 400 + 400 + 400 * 400 + 400 + 10 * (400 * 10 + 10);
  CHECK(expected == 610500);
  CHECK(count_parameters(1024, hidden, heads) == expected);
  MlpModel model(1024, hidden, heads);
  CHECK(model.parameter_count() == expected);
}

TEST_CASE("flat layout: trunk layers, then heads; weights row-major then bias") {
  const std::size_t hidden[] = {3};
  const std::size_t heads[] = {2, 4};
  MlpModel model(5, hidden, heads);
  REQUIRE(model.trunk().size() == 1);
  CHECK(model.trunk()[0].offset == 0);
  CHECK(model.head_layout(0).offset == 5 * 3 + 3);
  CHECK(model.head_layout(1).offset == 5 * 3 + 3 + 3 * 2 + 2);
  model.parameters()[2] = 7.0;                   // weight (row 0, col 2)
  model.parameters()[5 * 3 + 1] = -1.5;          // bias of unit 1
  CHECK(model.weights(model.trunk()[0])(0, 2) == 7.0);
  CHECK(model.bias(model.trunk()[0])(1) == -1.5);
  CHECK_THROWS_AS(model.head_layout(2), LookupError);
}

TEST_CASE("flatten and unflatten round trip; length mismatch rejected") {
  Rng rng(1);
  MlpModel model = random_model(rng, 4, {6, 5}, {3, 2});
  ParamVector values(model.parameter_count());
  for (Eigen::Index i = 0; i < values.size(); ++i) values[i] = rng.normal();
  unflatten(model, values);
  CHECK(flatten(model) == values);
  ParamVector wrong(values.size() + 1);
  CHECK_THROWS_AS(unflatten(model, wrong), StructuralError);
}

TEST_CASE("head order is part of the flat layout") {
  const std::size_t hidden[] = {3};
  const std::size_t ab[] = {2, 4};
  const std::size_t ba[] = {4, 2};
  MlpModel first(2, hidden, ab);
  MlpModel second(2, hidden, ba);
  Rng rng(2);
  first.initialize(rng);
  // Same trunk; same head contents placed in swapped order.
  second.weights(second.trunk()[0]) = first.weights(first.trunk()[0]);
  second.weights(second.head_layout(1)) = first.weights(first.head_layout(0));
  second.weights(second.head_layout(0)) = first.weights(first.head_layout(1));
  CHECK(first.parameter_count() == second.parameter_count());
  CHECK(flatten(first) != flatten(second));
}

TEST_CASE("all-zero model predicts uniformly and has loss ln C") {
  const std::size_t hidden[] = {8};
  const std::size_t heads[] = {5};
  MlpModel model(3, hidden, heads);
  Rng rng(3);
  Batch batch{random_matrix(rng, 6, 3), {0, 1, 2, 3, 4, 0}, 0};
  const Matrix probs = softmax_rows(forward_logits(model, batch.inputs, 0));
  for (Eigen::Index i = 0; i < probs.size(); ++i) CHECK(probs.data()[i] == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(ce_loss_and_grad(model, batch).loss == doctest::Approx(std::log(5.0)).epsilon(1e-14));
}

TEST_CASE("identity trunk and head pass nonnegative inputs through") {
  const MlpModel::LayerSpec trunk[] = {{4, Activation::relu}};
  const std::size_t heads[] = {4};
  MlpModel model(4, trunk, heads);
  model.weights(model.trunk()[0]).setIdentity();
  model.weights(model.head_layout(0)).setIdentity();
  Rng rng(4);
  Matrix x = random_matrix(rng, 5, 4).cwiseAbs();
  CHECK(forward_logits(model, x, 0) == x);
}

TEST_CASE("forward_logits agrees with a straight-line implementation") {
  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    MlpModel model = random_model(rng, 7, {9, 6, 5}, {3, 4});
    const Matrix x = random_matrix(rng, 4, 7);
    for (std::size_t head = 0; head < 2; ++head) {
      const Matrix logits = forward_logits(model, x, head);
      for (Eigen::Index r = 0; r < x.rows(); ++r) {
        std::vector<double> row(x.row(r).data(), x.row(r).data() + x.cols());
        const auto expected = naive_logits(model, row, head);
        for (std::size_t c = 0; c < expected.size(); ++c) {
          CHECK(std::abs(logits(r, static_cast<Eigen::Index>(c)) - expected[c]) < 1e-10);
        }
      }
    }
  }
}

TEST_CASE("softmax rows sum to one even for huge logits") {
  Matrix logits(3, 4);
  logits << 1000, 999, -1000, 0, -5, -5, -5, -5, 1e-3, 2e-3, 3e-3, 700;
  const Matrix p = softmax_rows(logits);
  for (Eigen::Index r = 0; r < 3; ++r) CHECK(std::abs(p.row(r).sum() - 1.0) <= 1e-12);
  CHECK(p.allFinite());
}

TEST_CASE("saturated correct logits drive the loss to zero") {
  const MlpModel::LayerSpec trunk[] = {{3, Activation::relu}};
  const std::size_t heads[] = {3};
  MlpModel model(3, trunk, heads);
  model.weights(model.trunk()[0]).setIdentity();
  model.weights(model.head_layout(0)).setIdentity();
  Matrix x(1, 3);
  x << 1000, 0, 0;
  Batch batch{x, {0}, 0};
  const LossAndGrad lg = ce_loss_and_grad(model, batch);
  CHECK(lg.loss >= 0.0);
  CHECK(lg.loss < 1e-300);
}

TEST_CASE("ce gradient matches central differences per coordinate") {
  Rng rng(6);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    MlpModel model = random_model(rng, 5, {8, 6}, {3, 4});
    REQUIRE(model.parameter_count() <= 2000);
    const std::size_t head = static_cast<std::size_t>(trial % 2);
    Batch batch{random_matrix(rng, 6, 5), {}, head};
    for (int i = 0; i < 6; ++i) batch.labels.push_back(static_cast<Label>(rng.below(model.head_width(head))));
    const LossAndGrad lg = ce_loss_and_grad(model, batch);
    const double h = 1e-5;
    for (Eigen::Index i = 0; i < model.parameters().size(); ++i) {
      MlpModel up = model, down = model;
      up.parameters()[i] += h;
      down.parameters()[i] -= h;
      const double numeric =
          (ce_loss(up, batch.inputs, batch.labels, head) - ce_loss(down, batch.inputs, batch.labels, head)) / (2 * h);
      const double scale = std::max({std::abs(numeric), std::abs(lg.grad[i]), 1e-6});
      worst = std::max(worst, std::abs(numeric - lg.grad[i]) / scale);
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("inactive heads receive exactly zero gradient") {
  Rng rng(7);
  MlpModel model = random_model(rng, 4, {5}, {3, 3, 2});
  Batch batch{random_matrix(rng, 8, 4), {0, 1, 2, 0, 1, 2, 0, 1}, 1};
  const LossAndGrad lg = ce_loss_and_grad(model, batch);
  for (std::size_t h : {0u, 2u}) {
    const DenseLayout& l = model.head_layout(h);
    CHECK(lg.grad.segment(static_cast<Eigen::Index>(l.offset), static_cast<Eigen::Index>(l.size())).cwiseAbs().maxCoeff() == 0.0);
  }
  const DenseLayout& active = model.head_layout(1);
  CHECK(lg.grad.segment(static_cast<Eigen::Index>(active.offset), static_cast<Eigen::Index>(active.size())).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("ce_loss_and_grad errors") {
  Rng rng(8);
  MlpModel model = random_model(rng, 4, {5}, {3});
  Batch empty{Matrix(0, 4), {}, 0};
  CHECK_THROWS_AS(ce_loss_and_grad(model, empty), UsageError);
  Batch wide{random_matrix(rng, 2, 5), {0, 1}, 0};
  CHECK_THROWS_AS(ce_loss_and_grad(model, wide), StructuralError);
  Batch unknown_head{random_matrix(rng, 2, 4), {0, 1}, 3};
  CHECK_THROWS_AS(ce_loss_and_grad(model, unknown_head), LookupError);
  CHECK_THROWS_AS(forward_logits(model, random_matrix(rng, 2, 3), 0), StructuralError);
}

TEST_CASE("sgd_momentum_step recurrences") {
  ParamVector p(3), g(3), v = ParamVector::Zero(3);
  p << 1.0, -2.0, 0.5;
  g << 0.25, 0.5, -1.0;
  ParamVector expected = p - g;
  sgd_momentum_step(p, g, v, 1.0, 0.0);
  CHECK(p == expected);

  ParamVector q = p, zero = ParamVector::Zero(3), vz = ParamVector::Zero(3);
  sgd_momentum_step(q, zero, vz, 0.1, 0.9);
  CHECK(q == p);

  // Two steps, hand-unrolled.
  ParamVector theta(2), vel = ParamVector::Zero(2), g1(2), g2(2);
  theta << 0.3, -0.7;
  g1 << 0.11, -0.05;
  g2 << -0.02, 0.4;
  const double lr = 0.01, m = 0.9;
  double v0 = m * 0.0 + 0.11, v1 = m * 0.0 + -0.05;
  double t0 = 0.3 - lr * v0, t1 = -0.7 - lr * v1;
  v0 = m * v0 + -0.02;
  v1 = m * v1 + 0.4;
  t0 = t0 - lr * v0;
  t1 = t1 - lr * v1;
  sgd_momentum_step(theta, g1, vel, lr, m);
  sgd_momentum_step(theta, g2, vel, lr, m);
  CHECK(theta[0] == t0);
  CHECK(theta[1] == t1);
  CHECK(vel[0] == v0);
  CHECK(vel[1] == v1);

  ParamVector bad(3);
  bad << 0.0, std::numeric_limits<double>::quiet_NaN(), 0.0;
  ParamVector vel3 = ParamVector::Zero(3);
  CHECK_THROWS_AS(sgd_momentum_step(p, bad, vel3, 0.1, 0.9), NumericError);
}

TEST_CASE("predict matches the argmax of forward_logits across chunk boundaries") {
  Rng rng(9);
  MlpModel model = random_model(rng, 3, {4}, {5});
  const Matrix x = random_matrix(rng, 1100, 3);
  const auto labels = predict(model, x, 0);
  const Matrix logits = forward_logits(model, x, 0);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    Eigen::Index best = 0;
    logits.row(r).maxCoeff(&best);
    REQUIRE(labels[static_cast<std::size_t>(r)] == static_cast<Label>(best));
  }
}

TEST_CASE("initialization: glorot bounds, zero biases, seed determinism") {
  const std::size_t hidden[] = {30};
  const std::size_t heads[] = {10};
  MlpModel a(20, hidden, heads), b(20, hidden, heads);
  Rng ra(10), rb(10);
  a.initialize(ra);
  b.initialize(rb);
  CHECK(a.parameters() == b.parameters());
  const double limit = std::sqrt(6.0 / 50.0);
  CHECK(a.weights(a.trunk()[0]).cwiseAbs().maxCoeff() <= limit);
  CHECK(a.bias(a.trunk()[0]).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.bias(a.head_layout(0)).cwiseAbs().maxCoeff() == 0.0);
}
