#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "dpp/cellspace.hpp"
#include "dpp/costmodel.hpp"
#include "dpp/kernels.hpp"

namespace dpp {

struct Evaluation {
  double accuracy = 0.0;
  int epochs_used = 0;
  std::string evaluator_id;
  std::uint64_t seed = 0;

  double error_rate() const { return 1.0 - accuracy; }
  friend bool operator==(const Evaluation&, const Evaluation&) = default;
};

class EvaluationError : public std::runtime_error {
 public:
  EvaluationError(const std::string& what, int epoch) : std::runtime_error(what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

// Maps (cell, macro, seed) to an Evaluation deterministically. The search
// engine only sees this interface.
class Evaluator {
 public:
  virtual ~Evaluator() = default;
  virtual std::string id() const = 0;
  virtual Evaluation evaluate(const CellSpec& cell, const MacroConfig& macro, std::uint64_t seed) const = 0;
};

// ---------------------------------------------------------------------------
// Synthetic oracle
//
// accuracy = clamp(0.60 + sum_i w(token_i) * 0.9^floor(i/2)
//                  + 0.01 * [some bn_relu is directly followed by conv3x3]
//                  - 0.02 * macs(cell) / macs(cell with every conv -> conv3x3)
//                  + noise, 0, 1)
// noise = ((fnv1a64(canonical string + decimal seed) mod 1000) / 1000 - 0.5) * 0.01
// ---------------------------------------------------------------------------

double oracle_token_weight(LayerOp op);
double oracle_noise(const CellSpec& cell, std::uint64_t seed);
Evaluation oracle_accuracy(const CellSpec& cell, const MacroConfig& macro, std::uint64_t seed, bool noise = true);

class OracleEvaluator final : public Evaluator {
 public:
  explicit OracleEvaluator(bool noise = true) : noise_(noise) {}
  std::string id() const override { return noise_ ? "oracle" : "oracle-noiseless"; }
  Evaluation evaluate(const CellSpec& cell, const MacroConfig& macro, std::uint64_t seed) const override {
    return oracle_accuracy(cell, macro, seed, noise_);
  }

 private:
  bool noise_;
};

// ---------------------------------------------------------------------------
// Tiny trainer on a generated image set
// ---------------------------------------------------------------------------

struct SyntheticDataset {
  static constexpr int kHeight = 8;
  static constexpr int kWidth = 8;
  static constexpr int kChannels = 3;
  static constexpr int kClasses = 4;

  std::uint64_t seed = 0;
  std::vector<Tensor4<double>> patterns;  // one 1x3x8x8 field per class
  Tensor4<double> train_images;
  std::vector<int> train_labels;
  Tensor4<double> test_images;
  std::vector<int> test_labels;
};

SyntheticDataset make_dataset(std::uint64_t seed, int train_count = 2048, int test_count = 512);

struct TrainOptions {
  int epochs = 10;
  double learning_rate = 0.1;
  double momentum = 0.9;
  int batch_size = 256;
  double group_lasso = 1e-5;
};

struct TrainLog {
  double initial_loss = 0.0;  // first batch, before any update
  std::vector<double> epoch_loss;
  double test_accuracy = 0.0;
  double final_loss() const { return epoch_loss.empty() ? initial_loss : epoch_loss.back(); }
};

// SGD with Nesterov momentum, cosine decay to zero, one condensation event
// for lgconv1x1 at the half-way epoch. Throws EvaluationError on a
// non-finite loss.
TrainLog train_network(const CellSpec& cell, const MacroConfig& macro, const SyntheticDataset& data,
                       const TrainOptions& options, std::uint64_t seed);

Evaluation train_and_eval(const CellSpec& cell, const MacroConfig& macro, int epochs, std::uint64_t seed);

class TrainerEvaluator final : public Evaluator {
 public:
  explicit TrainerEvaluator(TrainOptions options = {}) : options_(options) {}
  std::string id() const override { return "trainer"; }
  Evaluation evaluate(const CellSpec& cell, const MacroConfig& macro, std::uint64_t seed) const override;

 private:
  TrainOptions options_;
};

}  // namespace dpp
