#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dpp/cellspace.hpp"
#include "dpp/rng.hpp"

namespace dpp {

class EncodingError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SurrogateConfig {
  int embedding_size = 128;
  int hidden_size = 128;
  double learning_rate = 0.008;
  int epochs = 200;
  int batch_size = 512;  // full batch when the set is no larger
};

struct TrainingPair {
  std::vector<int> tokens;
  double accuracy = 0.0;
};
using TrainSet = std::vector<TrainingPair>;

TrainingPair make_pair(const CellSpec& cell, double accuracy);

struct FitLog {
  std::vector<double> epoch_loss;  // mean squared error at the start of each epoch

  double initial_loss() const { return epoch_loss.front(); }
  double final_loss() const { return epoch_loss.back(); }
};

enum class SurrogateBlock { embeddings, input_weights, recurrent_weights, norm_gain, norm_bias, head_weights, head_bias };
inline constexpr SurrogateBlock kSurrogateBlocks[] = {
    SurrogateBlock::embeddings,  SurrogateBlock::input_weights, SurrogateBlock::recurrent_weights,
    SurrogateBlock::norm_gain,   SurrogateBlock::norm_bias,     SurrogateBlock::head_weights,
    SurrogateBlock::head_bias};
std::string_view to_string(SurrogateBlock block);

// Token embeddings feed a single-layer LSTM whose four gate pre-activation
// blocks are each layer-normalized (the per-block gain and bias replace the
// usual gate bias). The last hidden state goes through a linear head and a
// sigmoid. All parameters live in one flat vector.
template <typename Scalar>
class SurrogateModel {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  static constexpr double kEpsilon = 1e-5;
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kAdamEpsilon = 1e-8;

  explicit SurrogateModel(std::uint64_t seed, SurrogateConfig config = {});

  const SurrogateConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  long step_count() const { return step_; }

  Scalar predict(std::span<const int> tokens) const;
  Scalar predict(const CellSpec& cell) const { return predict(std::span<const int>(cell.tokens())); }
  std::vector<Scalar> predict(const std::vector<CellSpec>& cells) const;

  // Adam on mean squared error. The set is put in canonical order first, so
  // the result does not depend on the order of the input.
  FitLog fit(const TrainSet& data);

  Scalar loss(const TrainSet& data) const;
  // Loss and d(loss)/d(parameters) for the whole set.
  Scalar loss_and_gradient(const TrainSet& data, Vector& gradient) const;

  Vector& parameters() { return params_; }
  const Vector& parameters() const { return params_; }
  Eigen::Index block_offset(SurrogateBlock block) const;
  Eigen::Index block_size(SurrogateBlock block) const;
  Eigen::Map<Vector> block(SurrogateBlock block) {
    return Eigen::Map<Vector>(params_.data() + block_offset(block), block_size(block));
  }

  // Text record: a version line, then "key value" lines, then the parameter
  // and Adam moment vectors as "name count" followed by one value per line.
  void save(const std::filesystem::path& path) const;
  static SurrogateModel load(const std::filesystem::path& path);

 private:
  // Sum of squared errors over `members` (all of one sequence length); adds
  // scale * d(sum)/d(parameters) into gradient when given.
  Scalar accumulate(const TrainSet& data, std::span<const std::size_t> members, Scalar scale, Vector* gradient) const;
  Scalar evaluate(const TrainSet& data, std::span<const std::size_t> members, Vector* gradient) const;

  SurrogateConfig config_;
  std::uint64_t seed_;
  Vector params_;
  Vector adam_m_;
  Vector adam_v_;
  long step_ = 0;
};

extern template class SurrogateModel<float>;
extern template class SurrogateModel<double>;

// Central differences (step 1e-4) on the mean squared error of `sample`,
// compared to the analytic gradient on up to `per_block` entries of every
// parameter block. Returns the largest normwise relative error
// max|a - n| / max(max|a|, max|n|) over the blocks.
double gradient_check(SurrogateModel<double>& model, const TrainSet& sample, Rng& rng, int per_block = 48);

}  // namespace dpp
