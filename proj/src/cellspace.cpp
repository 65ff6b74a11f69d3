#include "dpp/cellspace.hpp"

#include <array>
#include <limits>

#include <fmt/format.h>

namespace dpp {
namespace {

constexpr std::array<std::string_view, kNumTokens> kNames = {
    "bn_relu", "bn", "id", "conv1x1", "conv3x3", "gconv1x1", "gconv3x3", "lgconv1x1", "dwconv3x3",
};

constexpr std::array<LayerOp, kNumNormOps> kNormOps = {LayerOp::bn_relu, LayerOp::bn, LayerOp::id};
constexpr std::array<LayerOp, kNumConvOps> kConvOps = {
    LayerOp::conv1x1,  LayerOp::conv3x3,   LayerOp::gconv1x1,
    LayerOp::gconv3x3, LayerOp::lgconv1x1, LayerOp::dwconv3x3,
};

void check_position(LayerOp op, std::size_t i) {
  if (is_norm(op) != position_is_norm(i)) {
    throw ParseError(fmt::format("parity violation at index {}: '{}' is a {} op but position {} "
                                 "requires a {} op",
                                 i, token_name(op), is_norm(op) ? "Norm" : "Conv", i,
                                 position_is_norm(i) ? "Norm" : "Conv"),
                     i);
  }
}

}  // namespace

std::string_view token_name(LayerOp op) { return kNames.at(static_cast<std::size_t>(op)); }

std::optional<LayerOp> token_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kNames.size(); ++i) {
    if (kNames[i] == name) return static_cast<LayerOp>(i);
  }
  return std::nullopt;
}

LayerOp token_from_index(int index) {
  if (index < 0 || index >= kNumTokens) {
    throw std::out_of_range(fmt::format("token index {} outside [0, {}]", index, kNumTokens - 1));
  }
  return static_cast<LayerOp>(index);
}

std::span<const LayerOp> ops_at_position(std::size_t position) {
  if (position_is_norm(position)) return kNormOps;
  return kConvOps;
}

CellSpec::CellSpec(std::vector<LayerOp> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw ParseError("cell must contain at least one layer", 0);
  for (std::size_t i = 0; i < layers_.size(); ++i) check_position(layers_[i], i);
}

CellSpec CellSpec::parse(std::string_view text) {
  if (text.empty()) throw ParseError("empty cell string", 0);
  std::vector<LayerOp> layers;
  std::size_t start = 0;
  while (true) {
    const std::size_t bar = text.find('|', start);
    const std::string_view piece = text.substr(start, bar == std::string_view::npos ? bar : bar - start);
    const std::size_t index = layers.size();
    const auto op = token_from_name(piece);
    if (!op) throw ParseError(fmt::format("unknown token '{}' at index {}", piece, index), index);
    check_position(*op, index);
    layers.push_back(*op);
    if (bar == std::string_view::npos) break;
    start = bar + 1;
  }
  return CellSpec(std::move(layers));
}

CellSpec CellSpec::from_tokens(std::span<const int> tokens) {
  std::vector<LayerOp> layers;
  layers.reserve(tokens.size());
  for (int t : tokens) layers.push_back(token_from_index(t));
  return CellSpec(std::move(layers));
}

std::string CellSpec::str() const {
  std::string out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (i) out += '|';
    out += token_name(layers_[i]);
  }
  return out;
}

std::vector<int> CellSpec::tokens() const {
  std::vector<int> out;
  out.reserve(layers_.size());
  for (LayerOp op : layers_) out.push_back(token_index(op));
  return out;
}

CellSpec CellSpec::extended(LayerOp op) const {
  check_position(op, layers_.size());
  CellSpec child;
  child.layers_ = layers_;
  child.layers_.push_back(op);
  return child;
}

std::uint64_t space_size(std::size_t depth) {
  if (depth == 0) throw std::invalid_argument("space_size: depth must be >= 1");
  std::uint64_t n = 1;
  for (std::size_t i = 0; i < depth; ++i) {
    const std::uint64_t options = ops_at_position(i).size();
    if (n > std::numeric_limits<std::uint64_t>::max() / options) {
      throw std::overflow_error(fmt::format("space_size({}) exceeds 64 bits", depth));
    }
    n *= options;
  }
  return n;
}

std::vector<CellSpec> enumerate(std::size_t depth, std::uint64_t cap) {
  std::uint64_t total = 0;
  try {
    total = space_size(depth);
  } catch (const std::overflow_error&) {
    throw CapacityError(fmt::format("enumerate({}): space exceeds cap {}", depth, cap));
  }
  if (total > cap) {
    throw CapacityError(fmt::format("enumerate({}): {} cells exceeds cap {}", depth, total, cap));
  }

  // Odometer over per-position choices; last position varies fastest.
  std::vector<std::size_t> digit(depth, 0);
  std::vector<LayerOp> layers(depth);
  std::vector<CellSpec> out;
  out.reserve(total);
  for (std::uint64_t n = 0; n < total; ++n) {
    for (std::size_t i = 0; i < depth; ++i) layers[i] = ops_at_position(i)[digit[i]];
    out.emplace_back(layers);
    for (std::size_t i = depth; i-- > 0;) {
      if (++digit[i] < ops_at_position(i).size()) break;
      digit[i] = 0;
    }
  }
  return out;
}

std::vector<CellSpec> mutate(const CellSpec& cell) {
  if (cell.empty()) throw std::invalid_argument("mutate: empty cell");
  std::vector<CellSpec> children;
  for (LayerOp op : ops_at_position(cell.depth())) children.push_back(cell.extended(op));
  return children;
}

}  // namespace dpp
