#include "dpp/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "dpp/costmodel.hpp"

namespace dpp {
namespace {

template <typename Scalar>
void require_channels(const OpState<Scalar>& op, const Tensor4<Scalar>& x) {
  if (x.c != op.c_in) {
    throw KernelShapeError(fmt::format("{}: expected {} input channels, got tensor {}x{}x{}x{}",
                                       token_name(op.op), op.c_in, x.n, x.c, x.h, x.w));
  }
}

template <typename Scalar>
struct BatchStats {
  VectorX<Scalar> mean;
  VectorX<Scalar> inv_std;
};

template <typename Scalar>
BatchStats<Scalar> batch_stats(const Tensor4<Scalar>& x) {
  const Eigen::Index count = static_cast<Eigen::Index>(x.n) * x.h * x.w;
  const Eigen::Index plane = static_cast<Eigen::Index>(x.h) * x.w;
  BatchStats<Scalar> s{VectorX<Scalar>::Zero(x.c), VectorX<Scalar>::Zero(x.c)};
  for (int ch = 0; ch < x.c; ++ch) {
    Scalar sum = 0;
    for (int b = 0; b < x.n; ++b) sum += x.data.segment(x.index(b, ch, 0, 0), plane).sum();
    const Scalar mean = sum / static_cast<Scalar>(count);
    Scalar var = 0;
    for (int b = 0; b < x.n; ++b) {
      var += (x.data.segment(x.index(b, ch, 0, 0), plane).array() - mean).square().sum();
    }
    var /= static_cast<Scalar>(count);
    s.mean[ch] = mean;
    s.inv_std[ch] = Scalar(1) / std::sqrt(var + static_cast<Scalar>(OpState<Scalar>::kEpsilon));
  }
  return s;
}

// Normalized and affine-shifted output, no activation.
template <typename Scalar>
Tensor4<Scalar> batch_norm(const OpState<Scalar>& op, const Tensor4<Scalar>& x, const VectorX<Scalar>& mean,
                           const VectorX<Scalar>& inv_std) {
  Tensor4<Scalar> y(x.n, x.c, x.h, x.w);
  const Eigen::Index plane = static_cast<Eigen::Index>(x.h) * x.w;
  for (int b = 0; b < x.n; ++b) {
    for (int ch = 0; ch < x.c; ++ch) {
      const Eigen::Index at = x.index(b, ch, 0, 0);
      y.data.segment(at, plane) =
          ((x.data.segment(at, plane).array() - mean[ch]) * (inv_std[ch] * op.gamma[ch]) + op.beta[ch]).matrix();
    }
  }
  return y;
}

template <typename Scalar>
Tensor4<Scalar> gather_channels(const Tensor4<Scalar>& x, const std::vector<int>& order) {
  Tensor4<Scalar> out(x.n, x.c, x.h, x.w);
  const Eigen::Index plane = static_cast<Eigen::Index>(x.h) * x.w;
  for (int b = 0; b < x.n; ++b) {
    for (int ch = 0; ch < x.c; ++ch) {
      out.data.segment(out.index(b, ch, 0, 0), plane) = x.data.segment(x.index(b, order[ch], 0, 0), plane);
    }
  }
  return out;
}

template <typename Scalar>
void conv2d_backward(const Tensor4<Scalar>& x, const VectorX<Scalar>& weights, const Tensor4<Scalar>& grad_out,
                     int kernel, int groups, Tensor4<Scalar>& grad_x, VectorX<Scalar>& grad_w) {
  const int c_out = grad_out.c;
  const int cin_g = x.c / groups;
  const int cout_g = c_out / groups;
  const int pad = kernel / 2;
  grad_x = Tensor4<Scalar>(x.n, x.c, x.h, x.w);
  grad_w = VectorX<Scalar>::Zero(weights.size());
  for (int b = 0; b < x.n; ++b) {
    for (int o = 0; o < c_out; ++o) {
      const int first_in = (o / cout_g) * cin_g;
      for (int y = 0; y < x.h; ++y) {
        for (int xx = 0; xx < x.w; ++xx) {
          const Scalar g = grad_out(b, o, y, xx);
          if (g == Scalar(0)) continue;
          for (int ci = 0; ci < cin_g; ++ci) {
            const Eigen::Index wbase = (static_cast<Eigen::Index>(o) * cin_g + ci) * kernel * kernel;
            for (int ky = 0; ky < kernel; ++ky) {
              const int iy = y + ky - pad;
              if (iy < 0 || iy >= x.h) continue;
              for (int kx = 0; kx < kernel; ++kx) {
                const int ix = xx + kx - pad;
                if (ix < 0 || ix >= x.w) continue;
                const Eigen::Index wi = wbase + ky * kernel + kx;
                grad_x(b, first_in + ci, iy, ix) += weights[wi] * g;
                grad_w[wi] += x(b, first_in + ci, iy, ix) * g;
              }
            }
          }
        }
      }
    }
  }
}

template <typename Scalar>
VectorX<Scalar> effective_weights(const OpState<Scalar>& op) {
  if (op.mask.size() == 0) return op.weights;
  return op.weights.cwiseProduct(op.mask);
}

int kernel_of(LayerOp op) { return kernel_size(op); }

}  // namespace

template <typename Scalar>
Tensor4<Scalar> conv2d(const Tensor4<Scalar>& x, const VectorX<Scalar>& weights, int c_out, int kernel, int groups,
                       KernelStats* stats) {
  if (groups < 1 || x.c % groups != 0 || c_out % groups != 0) {
    throw KernelShapeError(fmt::format("conv2d: {} -> {} channels not divisible by {} groups", x.c, c_out, groups));
  }
  const int cin_g = x.c / groups;
  const int cout_g = c_out / groups;
  if (weights.size() != static_cast<Eigen::Index>(c_out) * cin_g * kernel * kernel) {
    throw KernelShapeError(fmt::format("conv2d: weight count {} does not match {}x{}x{}x{}", weights.size(), c_out,
                                       cin_g, kernel, kernel));
  }
  const int pad = kernel / 2;
  Tensor4<Scalar> y(x.n, c_out, x.h, x.w);
  std::int64_t macs = 0;
  for (int b = 0; b < x.n; ++b) {
    for (int o = 0; o < c_out; ++o) {
      const int first_in = (o / cout_g) * cin_g;
      for (int yy = 0; yy < x.h; ++yy) {
        for (int xx = 0; xx < x.w; ++xx) {
          Scalar acc = 0;
          for (int ci = 0; ci < cin_g; ++ci) {
            const Eigen::Index wbase = (static_cast<Eigen::Index>(o) * cin_g + ci) * kernel * kernel;
            for (int ky = 0; ky < kernel; ++ky) {
              const int iy = yy + ky - pad;
              for (int kx = 0; kx < kernel; ++kx) {
                const int ix = xx + kx - pad;
                // Padded taps multiply an implicit zero and still count.
                ++macs;
                if (iy < 0 || iy >= x.h || ix < 0 || ix >= x.w) continue;
                acc += weights[wbase + ky * kernel + kx] * x(b, first_in + ci, iy, ix);
              }
            }
          }
          y(b, o, yy, xx) = acc;
        }
      }
    }
  }
  if (stats) stats->macs += macs;
  return y;
}

template <typename Scalar>
Tensor4<Scalar> channel_shuffle(const Tensor4<Scalar>& x, int groups) {
  if (groups < 1 || x.c % groups != 0) {
    throw KernelShapeError(fmt::format("channel_shuffle: {} channels not divisible by {} groups", x.c, groups));
  }
  Tensor4<Scalar> out(x.n, x.c, x.h, x.w);
  const Eigen::Index plane = static_cast<Eigen::Index>(x.h) * x.w;
  for (int b = 0; b < x.n; ++b) {
    for (int ch = 0; ch < x.c; ++ch) {
      out.data.segment(out.index(b, shuffle_destination(ch, x.c, groups), 0, 0), plane) =
          x.data.segment(x.index(b, ch, 0, 0), plane);
    }
  }
  return out;
}

template <typename Scalar>
OpState<Scalar> make_op(LayerOp token, int c_in, int c_out, int requested_groups, Rng& rng, Mode mode) {
  OpState<Scalar> op;
  op.op = token;
  op.c_in = c_in;
  op.c_out = c_out;
  op.groups = effective_groups(token, c_in, c_out, requested_groups);
  op.mode = mode;
  // Validates shape with the same rules the cost model applies.
  (void)op_params(token, c_in, c_out, requested_groups);

  if (token == LayerOp::bn || token == LayerOp::bn_relu) {
    op.gamma = VectorX<Scalar>::Ones(c_in);
    op.beta = VectorX<Scalar>::Zero(c_in);
    op.running_mean = VectorX<Scalar>::Zero(c_in);
    op.running_var = VectorX<Scalar>::Ones(c_in);
    return op;
  }
  if (is_norm(token)) return op;

  const int k = kernel_of(token);
  int weight_groups = op.groups;
  if (token == LayerOp::lgconv1x1) {
    op.gather.resize(c_in);
    std::iota(op.gather.begin(), op.gather.end(), 0);
    if (mode == Mode::train) weight_groups = 1;
  }
  const int fan_in = (c_in / weight_groups) * k * k;
  const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
  op.weights.resize(static_cast<Eigen::Index>(c_out) * fan_in);
  for (Eigen::Index i = 0; i < op.weights.size(); ++i) op.weights[i] = static_cast<Scalar>(rng.uniform(-scale, scale));
  return op;
}

template <typename Scalar>
void condense(OpState<Scalar>& op) {
  if (op.op != LayerOp::lgconv1x1 || op.mode != Mode::train) {
    throw std::logic_error("condense: only train-mode lgconv1x1 can be condensed");
  }
  const int g = op.groups;
  const int cin_g = op.c_in / g;
  const int cout_g = op.c_out / g;
  std::vector<bool> taken(op.c_in, false);
  op.gather.assign(op.c_in, 0);
  op.mask = VectorX<Scalar>::Zero(op.weights.size());
  for (int k = 0; k < g; ++k) {
    // Final output channels fed by pre-shuffle group k.
    std::vector<int> outputs;
    for (int q = k * cout_g; q < (k + 1) * cout_g; ++q) outputs.push_back(shuffle_destination(q, op.c_out, g));
    std::vector<std::pair<Scalar, int>> norms;
    for (int j = 0; j < op.c_in; ++j) {
      if (taken[j]) continue;
      Scalar s = 0;
      for (int p : outputs) s += op.weights[static_cast<Eigen::Index>(p) * op.c_in + j] * op.weights[static_cast<Eigen::Index>(p) * op.c_in + j];
      norms.emplace_back(s, j);
    }
    std::stable_sort(norms.begin(), norms.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<int> chosen;
    for (int t = 0; t < cin_g; ++t) chosen.push_back(norms[t].second);
    std::sort(chosen.begin(), chosen.end());
    for (int t = 0; t < cin_g; ++t) {
      const int j = chosen[t];
      taken[j] = true;
      op.gather[k * cin_g + t] = j;
      for (int p : outputs) op.mask[static_cast<Eigen::Index>(p) * op.c_in + j] = Scalar(1);
    }
  }
}

template <typename Scalar>
void set_mode(OpState<Scalar>& op, Mode mode) {
  if (op.mode == mode) return;
  if (op.op == LayerOp::lgconv1x1) {
    if (mode == Mode::train) throw std::logic_error("lgconv1x1: condensed weights cannot return to train mode");
    const int g = op.groups;
    const int cin_g = op.c_in / g;
    const int cout_g = op.c_out / g;
    VectorX<Scalar> condensed(static_cast<Eigen::Index>(op.c_out) * cin_g);
    for (int q = 0; q < op.c_out; ++q) {
      const int k = q / cout_g;
      const int p = shuffle_destination(q, op.c_out, g);
      for (int t = 0; t < cin_g; ++t) {
        condensed[static_cast<Eigen::Index>(q) * cin_g + t] =
            op.weights[static_cast<Eigen::Index>(p) * op.c_in + op.gather[k * cin_g + t]];
      }
    }
    op.weights = std::move(condensed);
    op.mask.resize(0);
  }
  op.mode = mode;
}

template <typename Scalar>
Tensor4<Scalar> forward(OpState<Scalar>& op, const Tensor4<Scalar>& x, KernelStats* stats) {
  require_channels(op, x);
  switch (op.op) {
    case LayerOp::id:
      return x;
    case LayerOp::bn:
    case LayerOp::bn_relu: {
      Tensor4<Scalar> y;
      if (op.mode == Mode::train) {
        const BatchStats<Scalar> s = batch_stats(x);
        y = batch_norm(op, x, s.mean, s.inv_std);
        const Scalar m = static_cast<Scalar>(OpState<Scalar>::kMomentum);
        const VectorX<Scalar> var = (s.inv_std.array().square().inverse() - static_cast<Scalar>(OpState<Scalar>::kEpsilon)).matrix();
        op.running_mean = m * op.running_mean + (Scalar(1) - m) * s.mean;
        op.running_var = m * op.running_var + (Scalar(1) - m) * var;
      } else {
        const VectorX<Scalar> inv_std =
            (op.running_var.array() + static_cast<Scalar>(OpState<Scalar>::kEpsilon)).rsqrt().matrix();
        y = batch_norm(op, x, op.running_mean, inv_std);
      }
      if (op.op == LayerOp::bn_relu) y.data = y.data.cwiseMax(Scalar(0));
      return y;
    }
    case LayerOp::conv1x1:
    case LayerOp::conv3x3:
      return conv2d(x, op.weights, op.c_out, kernel_of(op.op), 1, stats);
    case LayerOp::dwconv3x3:
      return conv2d(x, op.weights, op.c_out, 3, op.c_in, stats);
    case LayerOp::gconv1x1:
    case LayerOp::gconv3x3:
      return channel_shuffle(conv2d(x, op.weights, op.c_out, kernel_of(op.op), op.groups, stats), op.groups);
    case LayerOp::lgconv1x1:
      if (op.mode == Mode::train) return conv2d(x, effective_weights(op), op.c_out, 1, 1, stats);
      return channel_shuffle(conv2d(gather_channels(x, op.gather), op.weights, op.c_out, 1, op.groups, stats),
                             op.groups);
  }
  throw std::logic_error("forward: unknown op");
}

template <typename Scalar>
BackwardResult<Scalar> backward(const OpState<Scalar>& op, const Tensor4<Scalar>& x, const Tensor4<Scalar>& grad_out) {
  if (op.mode != Mode::train) {
    throw std::logic_error(fmt::format("{}: backward requires train mode", token_name(op.op)));
  }
  require_channels(op, x);
  if (grad_out.n != x.n || grad_out.c != op.c_out || grad_out.h != x.h || grad_out.w != x.w) {
    throw KernelShapeError(fmt::format("{}: grad_out {}x{}x{}x{} does not match output shape", token_name(op.op),
                                       grad_out.n, grad_out.c, grad_out.h, grad_out.w));
  }
  BackwardResult<Scalar> r;
  switch (op.op) {
    case LayerOp::id:
      r.grad_x = grad_out;
      return r;
    case LayerOp::bn:
    case LayerOp::bn_relu: {
      const BatchStats<Scalar> s = batch_stats(x);
      Tensor4<Scalar> dy = grad_out;
      if (op.op == LayerOp::bn_relu) {
        const Tensor4<Scalar> pre = batch_norm(op, x, s.mean, s.inv_std);
        for (Eigen::Index i = 0; i < dy.size(); ++i) {
          if (!(pre.data[i] > Scalar(0))) dy.data[i] = Scalar(0);
        }
      }
      const Eigen::Index plane = static_cast<Eigen::Index>(x.h) * x.w;
      const Scalar count = static_cast<Scalar>(static_cast<Eigen::Index>(x.n) * plane);
      r.grad_x = Tensor4<Scalar>(x.n, x.c, x.h, x.w);
      r.grads.gamma = VectorX<Scalar>::Zero(x.c);
      r.grads.beta = VectorX<Scalar>::Zero(x.c);
      for (int ch = 0; ch < x.c; ++ch) {
        Scalar sum_dy = 0;
        Scalar sum_dy_xhat = 0;
        for (int b = 0; b < x.n; ++b) {
          const Eigen::Index at = x.index(b, ch, 0, 0);
          const auto xhat = (x.data.segment(at, plane).array() - s.mean[ch]) * s.inv_std[ch];
          sum_dy += dy.data.segment(at, plane).sum();
          sum_dy_xhat += (dy.data.segment(at, plane).array() * xhat).sum();
        }
        r.grads.gamma[ch] = sum_dy_xhat;
        r.grads.beta[ch] = sum_dy;
        const Scalar k = op.gamma[ch] * s.inv_std[ch] / count;
        for (int b = 0; b < x.n; ++b) {
          const Eigen::Index at = x.index(b, ch, 0, 0);
          const auto xhat = (x.data.segment(at, plane).array() - s.mean[ch]) * s.inv_std[ch];
          r.grad_x.data.segment(at, plane) =
              (k * (count * dy.data.segment(at, plane).array() - sum_dy - xhat * sum_dy_xhat)).matrix();
        }
      }
      return r;
    }
    case LayerOp::conv1x1:
    case LayerOp::conv3x3:
      conv2d_backward(x, op.weights, grad_out, kernel_of(op.op), 1, r.grad_x, r.grads.weights);
      return r;
    case LayerOp::dwconv3x3:
      conv2d_backward(x, op.weights, grad_out, 3, op.c_in, r.grad_x, r.grads.weights);
      return r;
    case LayerOp::gconv1x1:
    case LayerOp::gconv3x3: {
      // The shuffle with swapped factors is its inverse.
      const Tensor4<Scalar> pre = channel_shuffle(grad_out, op.c_out / op.groups);
      conv2d_backward(x, op.weights, pre, kernel_of(op.op), op.groups, r.grad_x, r.grads.weights);
      return r;
    }
    case LayerOp::lgconv1x1:
      conv2d_backward(x, effective_weights(op), grad_out, 1, 1, r.grad_x, r.grads.weights);
      if (op.mask.size() != 0) r.grads.weights = r.grads.weights.cwiseProduct(op.mask);
      return r;
  }
  throw std::logic_error("backward: unknown op");
}

#define DPP_INSTANTIATE_KERNELS(Scalar)                                                                              \
  template Tensor4<Scalar> conv2d(const Tensor4<Scalar>&, const VectorX<Scalar>&, int, int, int, KernelStats*);      \
  template Tensor4<Scalar> channel_shuffle(const Tensor4<Scalar>&, int);                                            \
  template OpState<Scalar> make_op(LayerOp, int, int, int, Rng&, Mode);                                             \
  template void condense(OpState<Scalar>&);                                                                          \
  template void set_mode(OpState<Scalar>&, Mode);                                                                    \
  template Tensor4<Scalar> forward(OpState<Scalar>&, const Tensor4<Scalar>&, KernelStats*);                         \
  template BackwardResult<Scalar> backward(const OpState<Scalar>&, const Tensor4<Scalar>&, const Tensor4<Scalar>&);

DPP_INSTANTIATE_KERNELS(float)
DPP_INSTANTIATE_KERNELS(double)

}  // namespace dpp
