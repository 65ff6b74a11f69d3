#include "dpp/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <fmt/format.h>

#include "dpp/network.hpp"
#include "dpp/rng.hpp"

namespace dpp {

double oracle_token_weight(LayerOp op) {
  switch (op) {
    case LayerOp::bn_relu: return 0.020;
    case LayerOp::bn: return 0.008;
    case LayerOp::id: return 0.0;
    case LayerOp::conv1x1: return 0.015;
    case LayerOp::conv3x3: return 0.030;
    case LayerOp::gconv1x1: return 0.012;
    case LayerOp::gconv3x3: return 0.022;
    case LayerOp::lgconv1x1: return 0.018;
    case LayerOp::dwconv3x3: return 0.010;
  }
  return 0.0;
}

double oracle_noise(const CellSpec& cell, std::uint64_t seed) {
  const std::uint64_t h = fnv1a64(cell.str() + std::to_string(seed));
  return (static_cast<double>(h % 1000) / 1000.0 - 0.5) * 0.01;
}

Evaluation oracle_accuracy(const CellSpec& cell, const MacroConfig& macro, std::uint64_t seed, bool noise) {
  double acc = 0.60;
  bool pair = false;
  std::vector<LayerOp> reference = cell.layers();
  for (std::size_t i = 0; i < cell.depth(); ++i) {
    acc += oracle_token_weight(cell[i]) * std::pow(0.9, static_cast<double>(i / 2));
    if (cell[i] == LayerOp::bn_relu && i + 1 < cell.depth() && cell[i + 1] == LayerOp::conv3x3) pair = true;
    if (is_conv(reference[i])) reference[i] = LayerOp::conv3x3;
  }
  if (pair) acc += 0.01;
  const double macs = static_cast<double>(network_cost(macro, cell).macs);
  const double ref_macs = static_cast<double>(network_cost(macro, CellSpec(reference)).macs);
  acc -= 0.02 * macs / ref_macs;
  if (noise) acc += oracle_noise(cell, seed);
  return {std::clamp(acc, 0.0, 1.0), 0, noise ? "oracle" : "oracle-noiseless", seed};
}

SyntheticDataset make_dataset(std::uint64_t seed, int train_count, int test_count) {
  using D = SyntheticDataset;
  SyntheticDataset data;
  data.seed = seed;
  Rng rng(seed);
  for (int c = 0; c < D::kClasses; ++c) {
    Tensor4<double> p(1, D::kChannels, D::kHeight, D::kWidth);
    for (Eigen::Index i = 0; i < p.size(); ++i) p.data[i] = rng.normal();
    data.patterns.push_back(std::move(p));
  }
  const auto fill = [&](int count, Tensor4<double>& images, std::vector<int>& labels) {
    images = Tensor4<double>(count, D::kChannels, D::kHeight, D::kWidth);
    const Eigen::Index len = data.patterns[0].size();
    for (int i = 0; i < count; ++i) {
      const int label = i % D::kClasses;
      labels.push_back(label);
      auto sample = images.data.segment(images.index(i, 0, 0, 0), len);
      for (Eigen::Index k = 0; k < len; ++k) sample[k] = data.patterns[label].data[k] + rng.normal(0.0, 0.3);
    }
  };
  fill(train_count, data.train_images, data.train_labels);
  fill(test_count, data.test_images, data.test_labels);
  return data;
}

namespace {

Tensor4<double> gather_batch(const Tensor4<double>& images, const std::vector<std::size_t>& order, std::size_t first,
                             std::size_t count) {
  Tensor4<double> batch(static_cast<int>(count), images.c, images.h, images.w);
  const Eigen::Index len = static_cast<Eigen::Index>(images.c) * images.h * images.w;
  for (std::size_t b = 0; b < count; ++b) {
    batch.data.segment(batch.index(static_cast<int>(b), 0, 0, 0), len) =
        images.data.segment(images.index(static_cast<int>(order[first + b]), 0, 0, 0), len);
  }
  return batch;
}

// Mean softmax cross-entropy; writes d(loss)/d(logits) into grad.
double softmax_cross_entropy(const MatrixX<double>& logits, const std::vector<int>& labels, MatrixX<double>& grad) {
  const Eigen::Index batch = logits.cols();
  grad.resize(logits.rows(), batch);
  double loss = 0.0;
  for (Eigen::Index b = 0; b < batch; ++b) {
    const double top = logits.col(b).maxCoeff();
    const Eigen::VectorXd e = (logits.col(b).array() - top).exp().matrix();
    const double z = e.sum();
    loss -= logits(labels[b], b) - top - std::log(z);
    grad.col(b) = e / z;
    grad(labels[b], b) -= 1.0;
  }
  grad /= static_cast<double>(batch);
  return loss / static_cast<double>(batch);
}

void check_macro_matches(const MacroConfig& macro) {
  using D = SyntheticDataset;
  if (macro.height != D::kHeight || macro.width != D::kWidth || macro.channels != D::kChannels ||
      macro.num_classes != D::kClasses) {
    throw ConfigError(fmt::format("trainer needs an {}x{}x{} input with {} classes (macro has {}x{}x{}, {} classes)",
                                  D::kHeight, D::kWidth, D::kChannels, D::kClasses, macro.height, macro.width,
                                  macro.channels, macro.num_classes));
  }
}

}  // namespace

TrainLog train_network(const CellSpec& cell, const MacroConfig& macro, const SyntheticDataset& data,
                       const TrainOptions& options, std::uint64_t seed) {
  if (options.epochs < 1) throw std::invalid_argument("train_network: epochs must be >= 1");
  check_macro_matches(macro);

  Network<double> net(macro, cell, seed, Mode::train);
  std::vector<VectorX<double>> velocity;
  net.for_each_parameter([&](auto& p, auto&) { velocity.push_back(VectorX<double>::Zero(p.size())); });

  const std::size_t n = data.train_labels.size();
  const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(std::max(options.batch_size, 1)), n);
  const std::size_t steps_per_epoch = (n + batch - 1) / batch;
  const double total_steps = static_cast<double>(steps_per_epoch) * options.epochs;
  const int condense_epoch = options.epochs / 2;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng batch_rng(seed ^ 0x9e3779b97f4a7c15ULL);

  TrainLog log;
  std::size_t step = 0;
  MatrixX<double> grad;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    if (epoch == condense_epoch) net.condense();
    batch_rng.shuffle(order.begin(), order.end());
    double epoch_loss = 0.0;
    for (std::size_t first = 0; first < n; first += batch, ++step) {
      const std::size_t count = std::min(batch, n - first);
      const Tensor4<double> x = gather_batch(data.train_images, order, first, count);
      std::vector<int> labels(count);
      for (std::size_t b = 0; b < count; ++b) labels[b] = data.train_labels[order[first + b]];

      const MatrixX<double> logits = net.forward(x);
      double loss = softmax_cross_entropy(logits, labels, grad);
      net.backward(grad);
      loss += net.apply_group_lasso(options.group_lasso);
      if (!std::isfinite(loss)) {
        throw EvaluationError(fmt::format("non-finite training loss for '{}' at epoch {}", cell.str(), epoch), epoch);
      }
      if (step == 0) log.initial_loss = loss;
      epoch_loss += loss * static_cast<double>(count);

      const double lr = 0.5 * options.learning_rate * (1.0 + std::cos(std::numbers::pi * step / total_steps));
      std::size_t block = 0;
      net.for_each_parameter([&](auto& p, auto& g) {
        VectorX<double>& v = velocity[block++];
        v = options.momentum * v + g;
        p -= lr * (g + options.momentum * v);
      });
    }
    log.epoch_loss.push_back(epoch_loss / static_cast<double>(n));
  }

  net.set_mode(Mode::eval);
  const std::size_t test_n = data.test_labels.size();
  std::vector<std::size_t> test_order(test_n);
  std::iota(test_order.begin(), test_order.end(), 0);
  std::size_t correct = 0;
  for (std::size_t first = 0; first < test_n; first += batch) {
    const std::size_t count = std::min(batch, test_n - first);
    const MatrixX<double> logits = net.forward(gather_batch(data.test_images, test_order, first, count));
    for (std::size_t b = 0; b < count; ++b) {
      Eigen::Index best = 0;
      logits.col(static_cast<Eigen::Index>(b)).maxCoeff(&best);
      if (best == data.test_labels[first + b]) ++correct;
    }
  }
  log.test_accuracy = test_n ? static_cast<double>(correct) / static_cast<double>(test_n) : 0.0;
  return log;
}

Evaluation train_and_eval(const CellSpec& cell, const MacroConfig& macro, int epochs, std::uint64_t seed) {
  if (epochs < 1) throw std::invalid_argument("train_and_eval: epochs must be >= 1");
  TrainOptions options;
  options.epochs = epochs;
  return TrainerEvaluator(options).evaluate(cell, macro, seed);
}

Evaluation TrainerEvaluator::evaluate(const CellSpec& cell, const MacroConfig& macro, std::uint64_t seed) const {
  if (options_.epochs < 1) throw std::invalid_argument("trainer: epochs must be >= 1");
  const SyntheticDataset data = make_dataset(seed);
  const TrainLog log = train_network(cell, macro, data, options_, seed);
  return {log.test_accuracy, options_.epochs, id(), seed};
}

}  // namespace dpp
