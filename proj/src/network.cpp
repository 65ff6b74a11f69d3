#include "dpp/network.hpp"

#include <cmath>

namespace dpp {

template <typename Scalar>
Tensor4<Scalar> concat_channels(const Tensor4<Scalar>& a, const Tensor4<Scalar>& b) {
  Tensor4<Scalar> out(a.n, a.c + b.c, a.h, a.w);
  const Eigen::Index pa = static_cast<Eigen::Index>(a.c) * a.h * a.w;
  const Eigen::Index pb = static_cast<Eigen::Index>(b.c) * b.h * b.w;
  for (int i = 0; i < a.n; ++i) {
    out.data.segment(out.index(i, 0, 0, 0), pa) = a.data.segment(a.index(i, 0, 0, 0), pa);
    out.data.segment(out.index(i, a.c, 0, 0), pb) = b.data.segment(b.index(i, 0, 0, 0), pb);
  }
  return out;
}

template <typename Scalar>
Tensor4<Scalar> avg_pool2x2(const Tensor4<Scalar>& x) {
  Tensor4<Scalar> out(x.n, x.c, x.h / 2, x.w / 2);
  for (int b = 0; b < x.n; ++b) {
    for (int c = 0; c < x.c; ++c) {
      for (int y = 0; y < out.h; ++y) {
        for (int xx = 0; xx < out.w; ++xx) {
          out(b, c, y, xx) = Scalar(0.25) * (x(b, c, 2 * y, 2 * xx) + x(b, c, 2 * y, 2 * xx + 1) +
                                             x(b, c, 2 * y + 1, 2 * xx) + x(b, c, 2 * y + 1, 2 * xx + 1));
        }
      }
    }
  }
  return out;
}

namespace {

template <typename Scalar>
Tensor4<Scalar> avg_pool2x2_backward(const Tensor4<Scalar>& grad_out, int in_h, int in_w) {
  Tensor4<Scalar> g(grad_out.n, grad_out.c, in_h, in_w);
  for (int b = 0; b < g.n; ++b) {
    for (int c = 0; c < g.c; ++c) {
      for (int y = 0; y < grad_out.h; ++y) {
        for (int x = 0; x < grad_out.w; ++x) {
          const Scalar v = Scalar(0.25) * grad_out(b, c, y, x);
          g(b, c, 2 * y, 2 * x) += v;
          g(b, c, 2 * y, 2 * x + 1) += v;
          g(b, c, 2 * y + 1, 2 * x) += v;
          g(b, c, 2 * y + 1, 2 * x + 1) += v;
        }
      }
    }
  }
  return g;
}

template <typename Scalar>
Tensor4<Scalar> channel_slice(const Tensor4<Scalar>& x, int first, int count) {
  Tensor4<Scalar> out(x.n, count, x.h, x.w);
  const Eigen::Index len = static_cast<Eigen::Index>(count) * x.h * x.w;
  for (int b = 0; b < x.n; ++b) out.data.segment(out.index(b, 0, 0, 0), len) = x.data.segment(x.index(b, first, 0, 0), len);
  return out;
}

}  // namespace

template <typename Scalar>
Network<Scalar>::Network(const MacroConfig& macro, const CellSpec& cell, std::uint64_t seed, Mode mode)
    : macro_(macro), mode_(mode) {
  macro_.validate();
  Rng rng(seed);
  stem_.op = make_op<Scalar>(LayerOp::conv3x3, macro_.channels, macro_.stem_width(), 1, rng, mode);
  int channels = macro_.stem_width();
  for (const Stage& stage : macro_.stages) {
    auto& cells = stages_.emplace_back();
    for (int j = 0; j < stage.repeats; ++j) {
      const ShapedCell shaped = shape_cell(cell, channels, stage.growth, macro_.bottleneck_multiplier, macro_.groups);
      auto& layers = cells.emplace_back();
      for (const ShapedLayer& sl : shaped.layers) {
        Layer layer;
        layer.op = make_op<Scalar>(sl.op, sl.c_in, sl.c_out, macro_.groups, rng, mode);
        layers.push_back(std::move(layer));
      }
      channels += stage.growth;
    }
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(channels));
  classifier_.resize(macro_.num_classes, channels);
  for (Eigen::Index i = 0; i < classifier_.size(); ++i) classifier_.data()[i] = static_cast<Scalar>(rng.uniform(-scale, scale));
  classifier_grad_ = MatrixX<Scalar>::Zero(classifier_.rows(), classifier_.cols());
}

template <typename Scalar>
MatrixX<Scalar> Network<Scalar>::forward(const Tensor4<Scalar>& x, KernelStats* stats) {
  const bool cache = mode_ == Mode::train;
  if (cache) {
    stem_.input = x;
    stage_outputs_.clear();
  }
  Tensor4<Scalar> features = dpp::forward(stem_.op, x, stats);
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    if (s > 0) {
      if (cache) stage_outputs_.push_back(features);
      features = avg_pool2x2(features);
    }
    for (auto& layers : stages_[s]) {
      Tensor4<Scalar> h = features;
      for (Layer& layer : layers) {
        if (cache) layer.input = h;
        h = dpp::forward(layer.op, h, stats);
      }
      features = concat_channels(features, h);
    }
  }
  const int plane = features.h * features.w;
  pooled_.resize(features.c, features.n);
  for (int b = 0; b < features.n; ++b) {
    for (int c = 0; c < features.c; ++c) {
      pooled_(c, b) = features.data.segment(features.index(b, c, 0, 0), plane).sum() / static_cast<Scalar>(plane);
    }
  }
  if (cache) final_features_ = std::move(features);
  if (stats) stats->macs += static_cast<std::int64_t>(classifier_.size()) * x.n;
  return classifier_ * pooled_;
}

template <typename Scalar>
void Network<Scalar>::store_grad(Layer& layer, OpGradients<Scalar>&& g) {
  if (g.weights.size()) layer.grad.weights = std::move(g.weights);
  if (g.gamma.size()) layer.grad.gamma = std::move(g.gamma);
  if (g.beta.size()) layer.grad.beta = std::move(g.beta);
}

template <typename Scalar>
void Network<Scalar>::backward(const MatrixX<Scalar>& grad_logits) {
  if (mode_ != Mode::train) throw std::logic_error("Network::backward requires train mode");
  classifier_grad_ = grad_logits * pooled_.transpose();
  const MatrixX<Scalar> grad_pooled = classifier_.transpose() * grad_logits;

  const Tensor4<Scalar>& feat = final_features_;
  const int plane = feat.h * feat.w;
  Tensor4<Scalar> grad(feat.n, feat.c, feat.h, feat.w);
  for (int b = 0; b < feat.n; ++b) {
    for (int c = 0; c < feat.c; ++c) {
      grad.data.segment(grad.index(b, c, 0, 0), plane).setConstant(grad_pooled(c, b) / static_cast<Scalar>(plane));
    }
  }

  for (std::size_t s = stages_.size(); s-- > 0;) {
    const int growth = macro_.stages[s].growth;
    for (std::size_t j = stages_[s].size(); j-- > 0;) {
      auto& layers = stages_[s][j];
      const int in_channels = grad.c - growth;
      Tensor4<Scalar> g = channel_slice(grad, in_channels, growth);
      for (std::size_t l = layers.size(); l-- > 0;) {
        BackwardResult<Scalar> r = dpp::backward(layers[l].op, layers[l].input, g);
        store_grad(layers[l], std::move(r.grads));
        g = std::move(r.grad_x);
      }
      Tensor4<Scalar> rest = channel_slice(grad, 0, in_channels);
      rest.data += g.data;
      grad = std::move(rest);
    }
    if (s > 0) {
      const Tensor4<Scalar>& pre = stage_outputs_[s - 1];
      grad = avg_pool2x2_backward(grad, pre.h, pre.w);
    }
  }
  BackwardResult<Scalar> r = dpp::backward(stem_.op, stem_.input, grad);
  store_grad(stem_, std::move(r.grads));
}

template <typename Scalar>
void Network<Scalar>::set_mode(Mode mode) {
  dpp::set_mode(stem_.op, mode);
  for (auto& stage : stages_) {
    for (auto& cell : stage) {
      for (auto& layer : cell) dpp::set_mode(layer.op, mode);
    }
  }
  mode_ = mode;
}

template <typename Scalar>
void Network<Scalar>::condense() {
  for (auto& stage : stages_) {
    for (auto& cell : stage) {
      for (auto& layer : cell) {
        if (layer.op.op == LayerOp::lgconv1x1 && layer.op.mode == Mode::train) dpp::condense(layer.op);
      }
    }
  }
}

template <typename Scalar>
Scalar Network<Scalar>::apply_group_lasso(Scalar weight) {
  Scalar penalty = 0;
  for (auto& stage : stages_) {
    for (auto& cell : stage) {
      for (auto& layer : cell) {
        OpState<Scalar>& op = layer.op;
        if (op.op != LayerOp::lgconv1x1 || op.mode != Mode::train) continue;
        if (layer.grad.weights.size() != op.weights.size()) layer.grad.weights = VectorX<Scalar>::Zero(op.weights.size());
        const int cout_g = op.c_out / op.groups;
        for (int k = 0; k < op.groups; ++k) {
          for (int j = 0; j < op.c_in; ++j) {
            Scalar sq = 0;
            for (int q = k * cout_g; q < (k + 1) * cout_g; ++q) {
              const Eigen::Index at = static_cast<Eigen::Index>(shuffle_destination(q, op.c_out, op.groups)) * op.c_in + j;
              const Scalar v = op.mask.size() ? op.weights[at] * op.mask[at] : op.weights[at];
              sq += v * v;
            }
            const Scalar norm = std::sqrt(sq);
            penalty += weight * norm;
            if (norm <= Scalar(0)) continue;
            for (int q = k * cout_g; q < (k + 1) * cout_g; ++q) {
              const Eigen::Index at = static_cast<Eigen::Index>(shuffle_destination(q, op.c_out, op.groups)) * op.c_in + j;
              const Scalar m = op.mask.size() ? op.mask[at] : Scalar(1);
              layer.grad.weights[at] += weight * m * op.weights[at] * m / norm;
            }
          }
        }
      }
    }
  }
  return penalty;
}

template <typename Scalar>
std::int64_t Network<Scalar>::param_count() const {
  std::int64_t n = stem_.op.param_count() + classifier_.size();
  for (const auto& stage : stages_) {
    for (const auto& cell : stage) {
      for (const auto& layer : cell) n += layer.op.param_count();
    }
  }
  return n;
}

template class Network<float>;
template class Network<double>;
template Tensor4<float> concat_channels(const Tensor4<float>&, const Tensor4<float>&);
template Tensor4<double> concat_channels(const Tensor4<double>&, const Tensor4<double>&);
template Tensor4<float> avg_pool2x2(const Tensor4<float>&);
template Tensor4<double> avg_pool2x2(const Tensor4<double>&);

}  // namespace dpp
