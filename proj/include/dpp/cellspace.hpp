#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dpp {

// Nine searchable layer operations. The numeric values are the token indices
// fed to the surrogate and must not be reordered.
enum class LayerOp : std::uint8_t {
  bn_relu = 0,
  bn = 1,
  id = 2,
  conv1x1 = 3,
  conv3x3 = 4,
  gconv1x1 = 5,
  gconv3x3 = 6,
  lgconv1x1 = 7,
  dwconv3x3 = 8,
};

inline constexpr int kNumTokens = 9;
inline constexpr int kNumNormOps = 3;
inline constexpr int kNumConvOps = 6;

constexpr int token_index(LayerOp op) { return static_cast<int>(op); }
constexpr bool is_norm(LayerOp op) { return token_index(op) < kNumNormOps; }
constexpr bool is_conv(LayerOp op) { return !is_norm(op); }

// Kernel side length (1 or 3) of a conv op; 0 for Norm-set ops.
constexpr int kernel_size(LayerOp op) {
  switch (op) {
    case LayerOp::conv1x1:
    case LayerOp::gconv1x1:
    case LayerOp::lgconv1x1:
      return 1;
    case LayerOp::conv3x3:
    case LayerOp::gconv3x3:
    case LayerOp::dwconv3x3:
      return 3;
    default:
      return 0;
  }
}

constexpr bool is_grouped(LayerOp op) {
  return op == LayerOp::gconv1x1 || op == LayerOp::gconv3x3 || op == LayerOp::lgconv1x1;
}

std::string_view token_name(LayerOp op);
std::optional<LayerOp> token_from_name(std::string_view name);
LayerOp token_from_index(int index);  // throws std::out_of_range

// Ops allowed at 0-based layer position i: Norm set on even positions, Conv on odd.
std::span<const LayerOp> ops_at_position(std::size_t position);
constexpr bool position_is_norm(std::size_t position) { return position % 2 == 0; }

class ParseError : public std::invalid_argument {
 public:
  ParseError(const std::string& what, std::size_t position)
      : std::invalid_argument(what), position_(position) {}
  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

class CapacityError : public std::length_error {
 public:
  using std::length_error::length_error;
};

// An alternating Norm/Conv layer sequence. Always valid once constructed.
class CellSpec {
 public:
  CellSpec() = default;  // empty; only useful as a placeholder
  explicit CellSpec(std::vector<LayerOp> layers);

  static CellSpec parse(std::string_view text);
  static CellSpec from_tokens(std::span<const int> tokens);

  std::string str() const;
  std::vector<int> tokens() const;

  const std::vector<LayerOp>& layers() const noexcept { return layers_; }
  std::size_t depth() const noexcept { return layers_.size(); }
  bool empty() const noexcept { return layers_.empty(); }
  LayerOp operator[](std::size_t i) const { return layers_[i]; }

  CellSpec extended(LayerOp op) const;

  friend bool operator==(const CellSpec&, const CellSpec&) = default;
  // Token-index lexicographic order (enumeration order), not string order.
  friend auto operator<=>(const CellSpec& a, const CellSpec& b) { return a.layers_ <=> b.layers_; }

 private:
  std::vector<LayerOp> layers_;
};

inline std::string format(const CellSpec& cell) { return cell.str(); }
inline CellSpec parse_cell(std::string_view text) { return CellSpec::parse(text); }
inline std::vector<int> encode_tokens(const CellSpec& cell) { return cell.tokens(); }
inline CellSpec decode_tokens(std::span<const int> tokens) { return CellSpec::from_tokens(tokens); }

inline constexpr std::uint64_t kDefaultEnumerationCap = 1'000'000;

// Number of valid cells of the given depth. Throws std::invalid_argument on
// depth 0 and std::overflow_error when the count leaves 64 bits.
std::uint64_t space_size(std::size_t depth);

// All cells of the given depth in token-index lexicographic order.
std::vector<CellSpec> enumerate(std::size_t depth, std::uint64_t cap = kDefaultEnumerationCap);

// Every one-layer extension of `cell`.
std::vector<CellSpec> mutate(const CellSpec& cell);

// Orders cells by their canonical string; used for every deterministic tie-break.
struct CanonicalLess {
  bool operator()(const CellSpec& a, const CellSpec& b) const { return a.str() < b.str(); }
};

}  // namespace dpp
