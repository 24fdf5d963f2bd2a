#include "spwc/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace spwc {
namespace {

constexpr Eigen::Index kChunkRows = 512;

std::vector<MlpModel::LayerSpec> relu_trunk(std::span<const std::size_t> widths) {
  std::vector<MlpModel::LayerSpec> specs;
  specs.reserve(widths.size());
  for (auto w : widths) specs.push_back({w, Activation::relu});
  return specs;
}

void check_inputs(const MlpModel& model, const Matrix& inputs) {
  if (static_cast<std::size_t>(inputs.cols()) != model.input_width()) {
    throw StructuralError("input width " + std::to_string(inputs.cols()) +
                          " does not match model input width " +
                          std::to_string(model.input_width()));
  }
}

void check_labels(std::span<const Label> labels, std::size_t rows, std::size_t width) {
  if (labels.size() != rows) {
    throw StructuralError("label count " + std::to_string(labels.size()) +
                          " does not match row count " + std::to_string(rows));
  }
  for (auto y : labels) {
    if (y >= width) {
      throw UsageError("label " + std::to_string(y) + " outside head width " +
                       std::to_string(width));
    }
  }
}

// Mean CE of `logits` against `labels`; fills `delta` with (softmax - onehot) * scale.
double ce_from_logits(const Matrix& logits, std::span<const Label> labels, double scale,
                      Matrix* delta) {
  const Eigen::Index rows = logits.rows();
  double total = 0.0;
  if (delta) delta->resize(rows, logits.cols());
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto row = logits.row(r);
    const double peak = row.maxCoeff();
    const double sum = (row.array() - peak).exp().sum();
    const double log_norm = peak + std::log(sum);
    const auto y = static_cast<Eigen::Index>(labels[static_cast<std::size_t>(r)]);
    total += log_norm - row(y);
    if (delta) {
      delta->row(r) = ((row.array() - log_norm).exp() * scale).matrix();
      (*delta)(r, y) -= scale;
    }
  }
  return total / static_cast<double>(rows);
}

}  // namespace

MlpModel::MlpModel(std::size_t input_width, std::span<const std::size_t> hidden_widths,
                   std::span<const std::size_t> head_widths)
    : input_width_(input_width) {
  const auto specs = relu_trunk(hidden_widths);
  build(specs, head_widths);
}

MlpModel::MlpModel(std::size_t input_width, std::span<const LayerSpec> trunk,
                   std::span<const std::size_t> head_widths)
    : input_width_(input_width) {
  build(trunk, head_widths);
}

void MlpModel::build(std::span<const LayerSpec> trunk, std::span<const std::size_t> head_widths) {
  if (input_width_ == 0) throw StructuralError("input width must be positive");
  if (head_widths.empty()) throw StructuralError("model needs at least one head");
  std::size_t offset = 0;
  std::size_t in = input_width_;
  for (const auto& spec : trunk) {
    if (spec.width == 0) throw StructuralError("trunk layer width must be positive");
    trunk_.push_back({in, spec.width, spec.activation, offset});
    offset += trunk_.back().size();
    in = spec.width;
  }
  for (auto width : head_widths) {
    if (width == 0) throw StructuralError("head width must be positive");
    heads_.push_back({in, width, Activation::identity, offset});
    offset += heads_.back().size();
  }
  params_ = ParamVector::Zero(static_cast<Eigen::Index>(offset));
}

void MlpModel::initialize(Rng& rng) {
  auto init_layer = [&](const DenseLayout& layer) {
    const double limit = std::sqrt(6.0 / static_cast<double>(layer.in + layer.out));
    for (std::size_t i = 0; i < layer.weight_count(); ++i) {
      params_[static_cast<Eigen::Index>(layer.offset + i)] = rng.uniform(-limit, limit);
    }
    bias(layer).setZero();
  };
  for (const auto& layer : trunk_) init_layer(layer);
  for (const auto& layer : heads_) init_layer(layer);
}

std::size_t MlpModel::feature_width() const noexcept {
  return trunk_.empty() ? input_width_ : trunk_.back().out;
}

const DenseLayout& MlpModel::head_layout(std::size_t head) const {
  if (head >= heads_.size()) {
    throw LookupError("unknown head " + std::to_string(head) + " (model has " +
                      std::to_string(heads_.size()) + ")");
  }
  return heads_[head];
}

std::size_t count_parameters(std::size_t input_width, std::span<const std::size_t> hidden_widths,
                             std::span<const std::size_t> head_widths) {
  std::size_t total = 0;
  std::size_t in = input_width;
  for (auto w : hidden_widths) {
    total += in * w + w;
    in = w;
  }
  for (auto w : head_widths) total += in * w + w;
  return total;
}

ParamVector flatten(const MlpModel& model) { return model.parameters(); }

void unflatten(MlpModel& model, const ParamVector& values) {
  if (static_cast<std::size_t>(values.size()) != model.parameter_count()) {
    throw StructuralError("unflatten: vector length " + std::to_string(values.size()) +
                          " != parameter count " + std::to_string(model.parameter_count()));
  }
  model.parameters() = values;
}

ForwardPass forward_pass(const MlpModel& model, const Matrix& inputs, std::size_t head) {
  check_inputs(model, inputs);
  const DenseLayout& head_layer = model.head_layout(head);
  ForwardPass pass;
  pass.activations.reserve(model.trunk().size() + 1);
  pass.activations.push_back(inputs);
  for (const auto& layer : model.trunk()) {
    Matrix out = pass.activations.back() * model.weights(layer).transpose();
    out.rowwise() += model.bias(layer).transpose();
    if (layer.activation == Activation::relu) out = out.cwiseMax(0.0);
    pass.activations.push_back(std::move(out));
  }
  pass.logits = pass.activations.back() * model.weights(head_layer).transpose();
  pass.logits.rowwise() += model.bias(head_layer).transpose();
  return pass;
}

Matrix forward_logits(const MlpModel& model, const Matrix& inputs, std::size_t head) {
  return forward_pass(model, inputs, head).logits;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix probs(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double peak = logits.row(r).maxCoeff();
    probs.row(r) = (logits.row(r).array() - peak).exp().matrix();
    probs.row(r) /= probs.row(r).sum();
  }
  return probs;
}

std::vector<Label> predict(const MlpModel& model, const Matrix& inputs, std::size_t head) {
  std::vector<Label> out(static_cast<std::size_t>(inputs.rows()));
  for (Eigen::Index start = 0; start < inputs.rows(); start += kChunkRows) {
    const Eigen::Index n = std::min(kChunkRows, inputs.rows() - start);
    const Matrix logits = forward_logits(model, inputs.middleRows(start, n), head);
    for (Eigen::Index r = 0; r < n; ++r) {
      Eigen::Index best = 0;
      logits.row(r).maxCoeff(&best);
      out[static_cast<std::size_t>(start + r)] = static_cast<Label>(best);
    }
  }
  return out;
}

double accumulate_ce_grad(const MlpModel& model, const Batch& batch, double scale,
                          ParamVector& grad) {
  if (batch.inputs.rows() == 0) throw UsageError("ce_loss_and_grad: empty batch");
  if (grad.size() != model.parameters().size()) {
    throw StructuralError("gradient buffer length does not match parameter count");
  }
  check_inputs(model, batch.inputs);
  check_labels(batch.labels, static_cast<std::size_t>(batch.inputs.rows()),
               model.head_width(batch.head));
  const ForwardPass pass = forward_pass(model, batch.inputs, batch.head);
  Matrix delta;
  const double loss = ce_from_logits(pass.logits, batch.labels,
                                     scale / static_cast<double>(batch.inputs.rows()), &delta);
  backpropagate(model, pass, batch.head, std::move(delta),
                [&](const DenseLayout& layer, const Matrix& d, const Matrix& a) {
                  Eigen::Map<Matrix> gw(grad.data() + layer.offset,
                                        static_cast<Eigen::Index>(layer.out),
                                        static_cast<Eigen::Index>(layer.in));
                  gw.noalias() += d.transpose() * a;
                  grad.segment(static_cast<Eigen::Index>(layer.offset + layer.weight_count()),
                               static_cast<Eigen::Index>(layer.out)) +=
                      d.colwise().sum().transpose();
                });
  return loss;
}

LossAndGrad ce_loss_and_grad(const MlpModel& model, const Batch& batch) {
  LossAndGrad result;
  result.grad = ParamVector::Zero(model.parameters().size());
  result.loss = accumulate_ce_grad(model, batch, 1.0, result.grad);
  return result;
}

double ce_loss(const MlpModel& model, const Matrix& inputs, std::span<const Label> labels,
               std::size_t head) {
  if (inputs.rows() == 0) throw UsageError("ce_loss: empty input");
  check_inputs(model, inputs);
  check_labels(labels, static_cast<std::size_t>(inputs.rows()), model.head_width(head));
  double total = 0.0;
  for (Eigen::Index start = 0; start < inputs.rows(); start += kChunkRows) {
    const Eigen::Index n = std::min(kChunkRows, inputs.rows() - start);
    const Matrix logits = forward_logits(model, inputs.middleRows(start, n), head);
    total += ce_from_logits(logits, labels.subspan(static_cast<std::size_t>(start),
                                                   static_cast<std::size_t>(n)),
                            1.0, nullptr) *
             static_cast<double>(n);
  }
  return total / static_cast<double>(inputs.rows());
}

void sgd_momentum_step(ParamVector& params, const ParamVector& grad, ParamVector& velocity,
                       double lr, double momentum) {
  if (params.size() != grad.size() || params.size() != velocity.size()) {
    throw StructuralError("sgd_momentum_step: length mismatch");
  }
  if (!grad.allFinite()) throw NumericError("sgd_momentum_step: non-finite gradient");
  velocity = momentum * velocity + grad;
  params -= lr * velocity;
}

}  // namespace spwc
