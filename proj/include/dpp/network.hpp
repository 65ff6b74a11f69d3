#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "dpp/costmodel.hpp"
#include "dpp/kernels.hpp"

namespace dpp {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

// The macro network of costmodel::network_layers realized with the reference
// kernels. Layer order, widths and weight counts match the cost model.
template <typename Scalar>
class Network {
 public:
  Network(const MacroConfig& macro, const CellSpec& cell, std::uint64_t seed, Mode mode = Mode::train);

  // Returns logits as a num_classes x batch matrix. Train mode caches the
  // activations backward() needs.
  MatrixX<Scalar> forward(const Tensor4<Scalar>& x, KernelStats* stats = nullptr);

  // Overwrites all parameter gradients from d(loss)/d(logits).
  void backward(const MatrixX<Scalar>& grad_logits);

  void set_mode(Mode mode);
  Mode mode() const noexcept { return mode_; }

  // One condensation event on every lgconv1x1 layer.
  void condense();

  // Adds weight * sum of per-(group, input) L2 norms of every dense lgconv1x1
  // weight to the loss, and its gradient to the weight gradients.
  Scalar apply_group_lasso(Scalar weight);

  std::int64_t param_count() const;

  // f(parameter, gradient) over every trainable block.
  template <typename F>
  void for_each_parameter(F&& f) {
    visit_op(stem_, f);
    for (auto& stage : stages_) {
      for (auto& cell : stage) {
        for (auto& layer : cell) visit_op(layer, f);
      }
    }
    Eigen::Map<VectorX<Scalar>> fc(classifier_.data(), classifier_.size());
    Eigen::Map<VectorX<Scalar>> fc_grad(classifier_grad_.data(), classifier_grad_.size());
    f(fc, fc_grad);
  }

 private:
  struct Layer {
    OpState<Scalar> op;
    OpGradients<Scalar> grad;
    Tensor4<Scalar> input;
  };

  template <typename F>
  static void visit_op(Layer& layer, F& f) {
    if (layer.op.weights.size()) f(layer.op.weights, layer.grad.weights);
    if (layer.op.gamma.size()) f(layer.op.gamma, layer.grad.gamma);
    if (layer.op.beta.size()) f(layer.op.beta, layer.grad.beta);
  }

  static void store_grad(Layer& layer, OpGradients<Scalar>&& g);

  MacroConfig macro_;
  Mode mode_;
  Layer stem_;
  std::vector<std::vector<std::vector<Layer>>> stages_;
  std::vector<Tensor4<Scalar>> stage_outputs_;  // pre-pooling, train-mode cache
  Tensor4<Scalar> final_features_;
  MatrixX<Scalar> pooled_;
  MatrixX<Scalar> classifier_;  // num_classes x features
  MatrixX<Scalar> classifier_grad_;
};

template <typename Scalar>
Tensor4<Scalar> concat_channels(const Tensor4<Scalar>& a, const Tensor4<Scalar>& b);

template <typename Scalar>
Tensor4<Scalar> avg_pool2x2(const Tensor4<Scalar>& x);

}  // namespace dpp
