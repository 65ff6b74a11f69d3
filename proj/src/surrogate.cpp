#include "dpp/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include <fmt/format.h>
#include <fmt/os.h>

namespace dpp {

TrainingPair make_pair(const CellSpec& cell, double accuracy) { return {cell.tokens(), accuracy}; }

std::string_view to_string(SurrogateBlock block) {
  switch (block) {
    case SurrogateBlock::embeddings: return "embeddings";
    case SurrogateBlock::input_weights: return "input_weights";
    case SurrogateBlock::recurrent_weights: return "recurrent_weights";
    case SurrogateBlock::norm_gain: return "norm_gain";
    case SurrogateBlock::norm_bias: return "norm_bias";
    case SurrogateBlock::head_weights: return "head_weights";
    case SurrogateBlock::head_bias: return "head_bias";
  }
  return "?";
}

namespace {

template <typename S>
S sigmoid(S x) {
  return S(1) / (S(1) + std::exp(-x));
}

void check_tokens(std::span<const int> tokens) {
  if (tokens.empty()) throw EncodingError("surrogate input must contain at least one token");
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || tokens[i] >= kNumTokens) {
      throw EncodingError(fmt::format("token {} at position {} is outside [0, {}]", tokens[i], i, kNumTokens - 1));
    }
  }
}

std::string sequence_key(const std::vector<int>& tokens) {
  std::string key;
  for (int t : tokens) {
    key += token_name(token_from_index(t));
    key += '|';
  }
  return key;
}

}  // namespace

template <typename S>
SurrogateModel<S>::SurrogateModel(std::uint64_t seed, SurrogateConfig config) : config_(config), seed_(seed) {
  if (config_.embedding_size < 1 || config_.hidden_size < 1) {
    throw std::invalid_argument("surrogate sizes must be positive");
  }
  params_ = Vector::Zero(block_offset(SurrogateBlock::head_bias) + 1);
  adam_m_ = Vector::Zero(params_.size());
  adam_v_ = Vector::Zero(params_.size());

  Rng rng(seed);
  const auto fill = [&](SurrogateBlock b, double lo, double hi) {
    auto v = block(b);
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = static_cast<S>(rng.uniform(lo, hi));
  };
  const double in_scale = 1.0 / std::sqrt(static_cast<double>(config_.embedding_size));
  const double h_scale = 1.0 / std::sqrt(static_cast<double>(config_.hidden_size));
  fill(SurrogateBlock::embeddings, 0.0, 1.0);
  fill(SurrogateBlock::input_weights, -in_scale, in_scale);
  fill(SurrogateBlock::recurrent_weights, -h_scale, h_scale);
  block(SurrogateBlock::norm_gain).setOnes();
  block(SurrogateBlock::norm_bias).setZero();
  fill(SurrogateBlock::head_weights, -h_scale, h_scale);
  block(SurrogateBlock::head_bias).setConstant(S(2));
}

template <typename S>
Eigen::Index SurrogateModel<S>::block_size(SurrogateBlock b) const {
  const Eigen::Index e = config_.embedding_size;
  const Eigen::Index h = config_.hidden_size;
  switch (b) {
    case SurrogateBlock::embeddings: return e * kNumTokens;
    case SurrogateBlock::input_weights: return 4 * h * e;
    case SurrogateBlock::recurrent_weights: return 4 * h * h;
    case SurrogateBlock::norm_gain:
    case SurrogateBlock::norm_bias: return 4 * h;
    case SurrogateBlock::head_weights: return h;
    case SurrogateBlock::head_bias: return 1;
  }
  return 0;
}

template <typename S>
Eigen::Index SurrogateModel<S>::block_offset(SurrogateBlock b) const {
  Eigen::Index offset = 0;
  for (SurrogateBlock other : kSurrogateBlocks) {
    if (other == b) return offset;
    offset += block_size(other);
  }
  return offset;
}

template <typename S>
S SurrogateModel<S>::accumulate(const TrainSet& data, std::span<const std::size_t> members, S scale,
                                Vector* gradient) const {
  const Eigen::Index E = config_.embedding_size;
  const Eigen::Index H = config_.hidden_size;
  const Eigen::Index B = static_cast<Eigen::Index>(members.size());
  const std::size_t L = data[members[0]].tokens.size();

  using CMap = Eigen::Map<const Matrix>;
  const S* base = params_.data();
  const CMap emb(base + block_offset(SurrogateBlock::embeddings), E, kNumTokens);
  const CMap wx(base + block_offset(SurrogateBlock::input_weights), 4 * H, E);
  const CMap wh(base + block_offset(SurrogateBlock::recurrent_weights), 4 * H, H);
  const Eigen::Map<const Vector> gain(base + block_offset(SurrogateBlock::norm_gain), 4 * H);
  const Eigen::Map<const Vector> bias(base + block_offset(SurrogateBlock::norm_bias), 4 * H);
  const Eigen::Map<const Vector> head_w(base + block_offset(SurrogateBlock::head_weights), H);
  const S head_b = base[block_offset(SurrogateBlock::head_bias)];

  struct Step {
    Matrix x, h_prev, c_prev, normed, gates, c, tanh_c;
    Matrix inv_std;  // 4 x B
  };
  std::vector<Step> steps(L);
  Matrix h = Matrix::Zero(H, B);
  Matrix c = Matrix::Zero(H, B);
  const S eps = static_cast<S>(kEpsilon);

  for (std::size_t t = 0; t < L; ++t) {
    Step& st = steps[t];
    st.x.resize(E, B);
    for (Eigen::Index b = 0; b < B; ++b) st.x.col(b) = emb.col(data[members[b]].tokens[t]);
    st.h_prev = h;
    st.c_prev = c;
    const Matrix z = wx * st.x + wh * h;
    st.normed.resize(4 * H, B);
    st.inv_std.resize(4, B);
    st.gates.resize(4 * H, B);
    for (Eigen::Index k = 0; k < 4; ++k) {
      for (Eigen::Index b = 0; b < B; ++b) {
        const auto zk = z.col(b).segment(k * H, H);
        const S mean = zk.mean();
        const S var = (zk.array() - mean).square().mean();
        const S inv = S(1) / std::sqrt(var + eps);
        st.inv_std(k, b) = inv;
        st.normed.col(b).segment(k * H, H) = (zk.array() - mean) * inv;
      }
    }
    const Matrix a = (st.normed.array().colwise() * gain.array()).colwise() + bias.array();
    for (Eigen::Index r = 0; r < 3 * H; ++r) {
      for (Eigen::Index b = 0; b < B; ++b) st.gates(r, b) = sigmoid(a(r, b));
    }
    st.gates.bottomRows(H) = a.bottomRows(H).array().tanh();
    const auto i_g = st.gates.topRows(H).array();
    const auto f_g = st.gates.middleRows(H, H).array();
    const auto o_g = st.gates.middleRows(2 * H, H).array();
    const auto g_g = st.gates.bottomRows(H).array();
    st.c = f_g * c.array() + i_g * g_g;
    st.tanh_c = st.c.array().tanh();
    h = o_g * st.tanh_c.array();
    c = st.c;
  }

  Vector y(B);
  S sse = 0;
  Vector d_logit(B);
  for (Eigen::Index b = 0; b < B; ++b) {
    y[b] = sigmoid(head_w.dot(h.col(b)) + head_b);
    const S err = y[b] - static_cast<S>(data[members[b]].accuracy);
    sse += err * err;
    d_logit[b] = scale * S(2) * err * y[b] * (S(1) - y[b]);
  }
  if (!gradient) return sse;

  S* g = gradient->data();
  using Map = Eigen::Map<Matrix>;
  Map d_emb(g + block_offset(SurrogateBlock::embeddings), E, kNumTokens);
  Map d_wx(g + block_offset(SurrogateBlock::input_weights), 4 * H, E);
  Map d_wh(g + block_offset(SurrogateBlock::recurrent_weights), 4 * H, H);
  Eigen::Map<Vector> d_gain(g + block_offset(SurrogateBlock::norm_gain), 4 * H);
  Eigen::Map<Vector> d_bias(g + block_offset(SurrogateBlock::norm_bias), 4 * H);
  Eigen::Map<Vector> d_head_w(g + block_offset(SurrogateBlock::head_weights), H);
  g[block_offset(SurrogateBlock::head_bias)] += d_logit.sum();
  d_head_w += h * d_logit;

  Matrix dh = head_w * d_logit.transpose();
  Matrix dc = Matrix::Zero(H, B);
  Matrix da(4 * H, B);
  for (std::size_t t = L; t-- > 0;) {
    const Step& st = steps[t];
    const auto i_g = st.gates.topRows(H).array();
    const auto f_g = st.gates.middleRows(H, H).array();
    const auto o_g = st.gates.middleRows(2 * H, H).array();
    const auto g_g = st.gates.bottomRows(H).array();
    const auto tc = st.tanh_c.array();

    dc.array() += dh.array() * o_g * (S(1) - tc.square());
    da.topRows(H) = dc.array() * g_g * i_g * (S(1) - i_g);
    da.middleRows(H, H) = dc.array() * st.c_prev.array() * f_g * (S(1) - f_g);
    da.middleRows(2 * H, H) = dh.array() * tc * o_g * (S(1) - o_g);
    da.bottomRows(H) = dc.array() * i_g * (S(1) - g_g.square());
    dc = (dc.array() * f_g).matrix();

    d_gain += (da.array() * st.normed.array()).rowwise().sum().matrix();
    d_bias += da.rowwise().sum();
    Matrix dz = (da.array().colwise() * gain.array()).matrix();
    for (Eigen::Index k = 0; k < 4; ++k) {
      for (Eigen::Index b = 0; b < B; ++b) {
        auto dn = dz.col(b).segment(k * H, H);
        const auto n = st.normed.col(b).segment(k * H, H);
        const S mean_dn = dn.mean();
        const S mean_dn_n = dn.dot(n) / static_cast<S>(H);
        dn = ((dn.array() - mean_dn - n.array() * mean_dn_n) * st.inv_std(k, b)).matrix();
      }
    }
    d_wx.noalias() += dz * st.x.transpose();
    d_wh.noalias() += dz * st.h_prev.transpose();
    const Matrix dx = wx.transpose() * dz;
    for (Eigen::Index b = 0; b < B; ++b) d_emb.col(data[members[b]].tokens[t]) += dx.col(b);
    dh = wh.transpose() * dz;
  }
  return sse;
}

template <typename S>
S SurrogateModel<S>::evaluate(const TrainSet& data, std::span<const std::size_t> members, Vector* gradient) const {
  if (members.empty()) throw std::invalid_argument("surrogate: empty training set");
  std::map<std::size_t, std::vector<std::size_t>> by_length;
  for (std::size_t m : members) {
    check_tokens(data[m].tokens);
    by_length[data[m].tokens.size()].push_back(m);
  }
  const S scale = S(1) / static_cast<S>(members.size());
  if (gradient) *gradient = Vector::Zero(params_.size());
  S sse = 0;
  for (const auto& [length, group] : by_length) sse += accumulate(data, group, scale, gradient);
  return sse * scale;
}

template <typename S>
S SurrogateModel<S>::predict(std::span<const int> tokens) const {
  check_tokens(tokens);
  TrainSet one{{std::vector<int>(tokens.begin(), tokens.end()), 0.0}};
  const std::size_t idx = 0;
  // With target 0 the squared error is the squared prediction.
  return std::sqrt(accumulate(one, std::span<const std::size_t>(&idx, 1), S(1), nullptr));
}

template <typename S>
std::vector<S> SurrogateModel<S>::predict(const std::vector<CellSpec>& cells) const {
  std::vector<S> out;
  out.reserve(cells.size());
  for (const auto& c : cells) out.push_back(predict(c));
  return out;
}

template <typename S>
S SurrogateModel<S>::loss(const TrainSet& data) const {
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), 0);
  return evaluate(data, all, nullptr);
}

template <typename S>
S SurrogateModel<S>::loss_and_gradient(const TrainSet& data, Vector& gradient) const {
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), 0);
  return evaluate(data, all, &gradient);
}

template <typename S>
FitLog SurrogateModel<S>::fit(const TrainSet& data) {
  if (data.size() < 2) throw std::invalid_argument("surrogate fit needs at least two training pairs");
  if (config_.epochs < 1 || config_.batch_size < 1) throw std::invalid_argument("surrogate epochs and batch size must be positive");

  std::vector<std::pair<std::string, std::size_t>> keyed;
  for (std::size_t i = 0; i < data.size(); ++i) {
    check_tokens(data[i].tokens);
    if (!(data[i].accuracy >= 0.0 && data[i].accuracy <= 1.0)) {
      throw std::invalid_argument(fmt::format("surrogate target {} is outside [0, 1]", data[i].accuracy));
    }
    keyed.emplace_back(sequence_key(data[i].tokens), i);
  }
  std::sort(keyed.begin(), keyed.end());
  for (std::size_t i = 1; i < keyed.size(); ++i) {
    if (keyed[i].first == keyed[i - 1].first) throw std::invalid_argument("surrogate training set has duplicate cells");
  }
  TrainSet sorted;
  sorted.reserve(data.size());
  for (const auto& [key, i] : keyed) sorted.push_back(data[i]);

  const std::size_t n = sorted.size();
  const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(config_.batch_size), n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed_ ^ 0x5bd1e995ULL);

  const S lr = static_cast<S>(config_.learning_rate);
  const S b1 = static_cast<S>(kBeta1), b2 = static_cast<S>(kBeta2), ae = static_cast<S>(kAdamEpsilon);
  FitLog log;
  Vector grad;
  for (int epoch = 0; epoch < config_.epochs; ++epoch) {
    if (batch < n) rng.shuffle(order.begin(), order.end());
    double epoch_loss = 0.0;
    for (std::size_t first = 0; first < n; first += batch) {
      const std::size_t count = std::min(batch, n - first);
      const S l = evaluate(sorted, std::span<const std::size_t>(order.data() + first, count), &grad);
      epoch_loss += static_cast<double>(l) * static_cast<double>(count);
      ++step_;
      adam_m_ = b1 * adam_m_ + (S(1) - b1) * grad;
      adam_v_ = b2 * adam_v_ + (S(1) - b2) * grad.cwiseAbs2();
      const S c1 = S(1) - std::pow(b1, static_cast<S>(step_));
      const S c2 = S(1) - std::pow(b2, static_cast<S>(step_));
      params_.array() -= lr * (adam_m_.array() / c1) / ((adam_v_.array() / c2).sqrt() + ae);
    }
    log.epoch_loss.push_back(epoch_loss / static_cast<double>(n));
  }
  return log;
}

template <typename S>
void SurrogateModel<S>::save(const std::filesystem::path& path) const {
  auto out = fmt::output_file(path.string());
  out.print("dpp-surrogate 1\n");
  out.print("embedding_size {}\nhidden_size {}\nlearning_rate {:.17g}\nepochs {}\nbatch_size {}\n",
            config_.embedding_size, config_.hidden_size, config_.learning_rate, config_.epochs, config_.batch_size);
  out.print("seed {}\nstep {}\n", seed_, step_);
  const auto dump = [&](std::string_view name, const Vector& v) {
    out.print("{} {}\n", name, v.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) out.print("{:.17g}\n", static_cast<double>(v[i]));
  };
  dump("params", params_);
  dump("adam_m", adam_m_);
  dump("adam_v", adam_v_);
}

template <typename S>
SurrogateModel<S> SurrogateModel<S>::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CheckpointError(fmt::format("cannot read surrogate checkpoint '{}'", path.string()));
  std::string tag;
  int version = 0;
  if (!(in >> tag >> version) || tag != "dpp-surrogate" || version != 1) {
    throw CheckpointError(fmt::format("'{}' is not a version 1 surrogate checkpoint", path.string()));
  }
  const auto expect = [&](std::string_view key, auto& value) {
    if (!(in >> tag) || tag != key || !(in >> value)) {
      throw CheckpointError(fmt::format("checkpoint '{}': expected field '{}'", path.string(), key));
    }
  };
  SurrogateConfig cfg;
  std::uint64_t seed = 0;
  long step = 0;
  expect("embedding_size", cfg.embedding_size);
  expect("hidden_size", cfg.hidden_size);
  expect("learning_rate", cfg.learning_rate);
  expect("epochs", cfg.epochs);
  expect("batch_size", cfg.batch_size);
  expect("seed", seed);
  expect("step", step);
  SurrogateModel model(seed, cfg);
  model.step_ = step;
  const auto read = [&](std::string_view name, Vector& v) {
    Eigen::Index count = 0;
    expect(name, count);
    if (count != v.size()) {
      throw CheckpointError(fmt::format("checkpoint '{}': {} has {} values, expected {}", path.string(), name, count, v.size()));
    }
    for (Eigen::Index i = 0; i < count; ++i) {
      double x = 0;
      if (!(in >> x)) throw CheckpointError(fmt::format("checkpoint '{}': truncated {}", path.string(), name));
      v[i] = static_cast<S>(x);
    }
  };
  read("params", model.params_);
  read("adam_m", model.adam_m_);
  read("adam_v", model.adam_v_);
  return model;
}

template class SurrogateModel<float>;
template class SurrogateModel<double>;

double gradient_check(SurrogateModel<double>& model, const TrainSet& sample, Rng& rng, int per_block) {
  constexpr double h = 1e-4;
  Eigen::VectorXd analytic;
  model.loss_and_gradient(sample, analytic);
  Eigen::VectorXd& p = model.parameters();
  double worst = 0.0;
  for (SurrogateBlock b : kSurrogateBlocks) {
    const Eigen::Index offset = model.block_offset(b);
    const Eigen::Index size = model.block_size(b);
    std::vector<Eigen::Index> picks(static_cast<std::size_t>(size));
    std::iota(picks.begin(), picks.end(), offset);
    if (size > per_block) {
      rng.shuffle(picks.begin(), picks.end());
      picks.resize(static_cast<std::size_t>(per_block));
    }
    double diff = 0.0, scale = 0.0;
    for (Eigen::Index i : picks) {
      const double keep = p[i];
      p[i] = keep + h;
      const double up = model.loss(sample);
      p[i] = keep - h;
      const double down = model.loss(sample);
      p[i] = keep;
      const double numeric = (up - down) / (2 * h);
      diff = std::max(diff, std::abs(analytic[i] - numeric));
      scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric)});
    }
    if (scale > 0) worst = std::max(worst, diff / scale);
  }
  return worst;
}

}  // namespace dpp
