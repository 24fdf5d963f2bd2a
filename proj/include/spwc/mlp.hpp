#pragma once

// Dense multi-head MLP with hand-written backpropagation.
//
// All parameters live in one flat vector. Layout (the alignment contract for
// importance vectors and snapshots): trunk layers in order, then heads in
// order; within a layer the weight matrix (out x in, row-major) followed by
// the bias vector.

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "spwc/errors.hpp"
#include "spwc/rng.hpp"

namespace spwc {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using ParamVector = Eigen::VectorXd;
using Label = std::uint32_t;

enum class Activation { relu, identity };

struct DenseLayout {
  std::size_t in = 0;
  std::size_t out = 0;
  Activation activation = Activation::identity;
  std::size_t offset = 0;  // index of the first weight in the flat vector

  std::size_t weight_count() const noexcept { return in * out; }
  std::size_t size() const noexcept { return in * out + out; }
};

struct Batch {
  Matrix inputs;              // batch x input_width
  std::vector<Label> labels;  // one per row, < head width
  std::size_t head = 0;
};

class MlpModel {
 public:
  struct LayerSpec {
    std::size_t width;
    Activation activation;
  };

  /// Trunk of `hidden_widths` relu layers followed by one identity head per
  /// entry of `head_widths`. Parameters start at zero; call initialize().
  MlpModel(std::size_t input_width, std::span<const std::size_t> hidden_widths,
           std::span<const std::size_t> head_widths);
  MlpModel(std::size_t input_width, std::span<const LayerSpec> trunk,
           std::span<const std::size_t> head_widths);

  /// Uniform(+-sqrt(6/(fan_in+fan_out))) weights, zero biases. Draws follow
  /// the flat layout order.
  void initialize(Rng& rng);

  std::size_t parameter_count() const noexcept { return static_cast<std::size_t>(params_.size()); }
  std::size_t input_width() const noexcept { return input_width_; }
  std::size_t feature_width() const noexcept;
  std::size_t head_count() const noexcept { return heads_.size(); }
  std::size_t head_width(std::size_t head) const { return head_layout(head).out; }

  const std::vector<DenseLayout>& trunk() const noexcept { return trunk_; }
  const std::vector<DenseLayout>& heads() const noexcept { return heads_; }
  const DenseLayout& head_layout(std::size_t head) const;

  const ParamVector& parameters() const noexcept { return params_; }
  ParamVector& parameters() noexcept { return params_; }

  Eigen::Map<const Matrix> weights(const DenseLayout& layer) const {
    return {params_.data() + layer.offset, static_cast<Eigen::Index>(layer.out),
            static_cast<Eigen::Index>(layer.in)};
  }
  Eigen::Map<Matrix> weights(const DenseLayout& layer) {
    return {params_.data() + layer.offset, static_cast<Eigen::Index>(layer.out),
            static_cast<Eigen::Index>(layer.in)};
  }
  Eigen::Map<const Vector> bias(const DenseLayout& layer) const {
    return {params_.data() + layer.offset + layer.weight_count(),
            static_cast<Eigen::Index>(layer.out)};
  }
  Eigen::Map<Vector> bias(const DenseLayout& layer) {
    return {params_.data() + layer.offset + layer.weight_count(),
            static_cast<Eigen::Index>(layer.out)};
  }

 private:
  void build(std::span<const LayerSpec> trunk, std::span<const std::size_t> head_widths);

  std::size_t input_width_;
  std::vector<DenseLayout> trunk_;
  std::vector<DenseLayout> heads_;
  ParamVector params_;
};

/// Parameter count of a relu trunk plus heads, without building the model.
std::size_t count_parameters(std::size_t input_width, std::span<const std::size_t> hidden_widths,
                             std::span<const std::size_t> head_widths);

ParamVector flatten(const MlpModel& model);
void unflatten(MlpModel& model, const ParamVector& values);

/// Activations of every trunk layer plus the active head's logits.
struct ForwardPass {
  std::vector<Matrix> activations;  // [0] = inputs, [i+1] = output of trunk layer i
  Matrix logits;
};

ForwardPass forward_pass(const MlpModel& model, const Matrix& inputs, std::size_t head);
Matrix forward_logits(const MlpModel& model, const Matrix& inputs, std::size_t head);

/// Row-wise softmax with max subtraction.
Matrix softmax_rows(const Matrix& logits);

/// Index of the largest logit per row (first on ties).
std::vector<Label> predict(const MlpModel& model, const Matrix& inputs, std::size_t head);

/// Pushes `delta` (dLoss/dLogits, batch x head width) down through the active
/// head and the trunk. For every layer, head first, calls
///   visit(layout, delta_rows, layer_inputs)
/// where delta_rows is dLoss/dPreactivation (batch x out) and layer_inputs is
/// the layer's input activations (batch x in). Per-sample gradients of the
/// layer are then delta_rows(s,:)^T * layer_inputs(s,:).
template <typename Visitor>
void backpropagate(const MlpModel& model, const ForwardPass& pass, std::size_t head,
                   Matrix delta, Visitor&& visit) {
  const DenseLayout& head_layer = model.head_layout(head);
  visit(head_layer, static_cast<const Matrix&>(delta), pass.activations.back());
  const auto& trunk = model.trunk();
  if (trunk.empty()) return;
  Matrix upstream = delta * model.weights(head_layer);
  for (std::size_t i = trunk.size(); i-- > 0;) {
    const DenseLayout& layer = trunk[i];
    if (layer.activation == Activation::relu) {
      upstream.array() *= (pass.activations[i + 1].array() > 0.0).cast<double>();
    }
    visit(layer, static_cast<const Matrix&>(upstream), pass.activations[i]);
    if (i > 0) upstream = upstream * model.weights(layer);
  }
}

struct LossAndGrad {
  double loss = 0.0;
  ParamVector grad;
};

/// Mean cross-entropy over the batch and its gradient. Only the trunk and the
/// batch's head receive nonzero gradient.
LossAndGrad ce_loss_and_grad(const MlpModel& model, const Batch& batch);

/// Adds scale * d(mean CE)/dTheta into `grad` and returns the mean CE.
double accumulate_ce_grad(const MlpModel& model, const Batch& batch, double scale,
                          ParamVector& grad);

/// Mean cross-entropy without a gradient, evaluated in row chunks.
double ce_loss(const MlpModel& model, const Matrix& inputs, std::span<const Label> labels,
               std::size_t head);

/// velocity <- momentum * velocity + grad; params <- params - lr * velocity.
void sgd_momentum_step(ParamVector& params, const ParamVector& grad, ParamVector& velocity,
                       double lr, double momentum);

}  // namespace spwc
