#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "dpp/cellspace.hpp"
#include "dpp/rng.hpp"

namespace dpp {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// Dense NCHW tensor, width fastest.
template <typename Scalar>
struct Tensor4 {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;
  VectorX<Scalar> data;

  Tensor4() = default;
  Tensor4(int batch, int channels, int height, int width)
      : n(batch), c(channels), h(height), w(width),
        data(VectorX<Scalar>::Zero(static_cast<Eigen::Index>(batch) * channels * height * width)) {}

  Eigen::Index size() const { return data.size(); }
  Eigen::Index index(int b, int ch, int y, int x) const {
    return ((static_cast<Eigen::Index>(b) * c + ch) * h + y) * w + x;
  }
  Scalar& operator()(int b, int ch, int y, int x) { return data[index(b, ch, y, x)]; }
  Scalar operator()(int b, int ch, int y, int x) const { return data[index(b, ch, y, x)]; }
  bool same_shape(const Tensor4& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
};

enum class Mode { train, eval };

// Parameters and mode of one layer op. lgconv1x1 holds a dense c_out x c_in
// weight in train mode and a condensed grouped weight in eval mode.
template <typename Scalar>
struct OpState {
  static constexpr double kEpsilon = 1e-5;
  static constexpr double kMomentum = 0.9;

  LayerOp op = LayerOp::id;
  int c_in = 0;
  int c_out = 0;
  int groups = 1;  // effective group count
  Mode mode = Mode::train;

  VectorX<Scalar> weights;  // conv weights, [c_out][c_in / groups][k][k]
  VectorX<Scalar> gamma;
  VectorX<Scalar> beta;
  VectorX<Scalar> running_mean;
  VectorX<Scalar> running_var;

  std::vector<int> gather;  // lgconv1x1: input channel order feeding the groups
  VectorX<Scalar> mask;     // lgconv1x1 train mode after condensation; empty = dense

  std::int64_t param_count() const { return weights.size() + gamma.size() + beta.size(); }
};

struct KernelStats {
  std::int64_t macs = 0;
};

class KernelShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Builds an op with centered-uniform weights of scale 1/sqrt(fan_in), unit BN
// gain, zero BN shift. `requested_groups` is clamped like the cost model does.
template <typename Scalar>
OpState<Scalar> make_op(LayerOp op, int c_in, int c_out, int requested_groups, Rng& rng,
                        Mode mode = Mode::train);

// Switches mode. Moving lgconv1x1 to eval condenses its weights through the
// stored gather; it cannot be moved back to train afterwards.
template <typename Scalar>
void set_mode(OpState<Scalar>& op, Mode mode);

// Single condensation event for lgconv1x1: per group, keep the c_in/groups
// unclaimed input channels with the largest weight-column norms and mask the rest.
template <typename Scalar>
void condense(OpState<Scalar>& op);

template <typename Scalar>
Tensor4<Scalar> forward(OpState<Scalar>& op, const Tensor4<Scalar>& x, KernelStats* stats = nullptr);

template <typename Scalar>
struct OpGradients {
  VectorX<Scalar> weights;
  VectorX<Scalar> gamma;
  VectorX<Scalar> beta;
};

template <typename Scalar>
struct BackwardResult {
  Tensor4<Scalar> grad_x;
  OpGradients<Scalar> grads;
};

// Reverse-mode gradients of a train-mode forward at input x.
template <typename Scalar>
BackwardResult<Scalar> backward(const OpState<Scalar>& op, const Tensor4<Scalar>& x,
                                const Tensor4<Scalar>& grad_out);

// Destination channel of source channel `src` under a shuffle with g groups:
// src = i*g + j moves to j*(C/g) + i.
constexpr int shuffle_destination(int src, int channels, int groups) {
  return (src % groups) * (channels / groups) + src / groups;
}

template <typename Scalar>
Tensor4<Scalar> channel_shuffle(const Tensor4<Scalar>& x, int groups);

// Direct-summation grouped convolution, stride 1, zero "same" padding.
template <typename Scalar>
Tensor4<Scalar> conv2d(const Tensor4<Scalar>& x, const VectorX<Scalar>& weights, int c_out, int kernel,
                       int groups, KernelStats* stats = nullptr);

}  // namespace dpp
