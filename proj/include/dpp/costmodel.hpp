#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "dpp/cellspace.hpp"

namespace dpp {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Stage {
  int repeats = 0;  // cells in the stage
  int growth = 0;   // channels each cell appends
  friend bool operator==(const Stage&, const Stage&) = default;
};

// CondenseNet-style macro network: stem conv, stages of densely connected
// cells, 2x2 average pooling between stages, global pooling, classifier.
struct MacroConfig {
  std::vector<Stage> stages;
  int height = 32;
  int width = 32;
  int channels = 3;
  int num_classes = 10;
  std::optional<int> stem_channels;  // defaults to 2 * stages[0].growth
  int groups = 4;
  int bottleneck_multiplier = 4;

  int stem_width() const;
  void validate() const;  // throws ConfigError

  // C = (14, 14, 14), G = (8, 16, 32) on 32x32x3 with 10 classes.
  static MacroConfig cifar();
  // C = (2, 2), G = (4, 8) on 8x8x3 with 4 classes; sized for the tiny trainer.
  static MacroConfig desk();

  friend bool operator==(const MacroConfig&, const MacroConfig&) = default;
};

// Group count actually used by an op: gcd(c_in, c_out, requested) for the
// grouped ops, c_in for depthwise, 1 otherwise.
int effective_groups(LayerOp op, int c_in, int c_out, int requested);

// Weight elements held by one op (conv weights, BN affine). No conv biases.
std::int64_t op_params(LayerOp op, int c_in, int c_out, int groups = 4);
// Multiply-accumulates for one op at stride 1, "same" padding. Norm ops are 0.
std::int64_t op_macs(LayerOp op, int c_in, int c_out, int h, int w, int groups = 4);

struct ShapedLayer {
  LayerOp op = LayerOp::id;
  int c_in = 0;
  int c_out = 0;
  int groups = 1;           // effective
  bool transition = false;  // appended, not part of the searched cell
};

struct ShapedCell {
  CellSpec cell;
  int in_channels = 0;
  int growth = 0;
  std::vector<ShapedLayer> layers;
  int out_channels = 0;
  bool has_transition = false;
};

// Resolves per-layer widths: every non-depthwise conv emits
// bottleneck * growth channels except the last conv, which emits growth.
// Depthwise keeps its width. If the cell would not end at `growth` channels
// an lgconv1x1 transition is appended.
ShapedCell shape_cell(const CellSpec& cell, int in_channels, int growth, int bottleneck_multiplier = 4,
                      int groups = 4);

enum class LayerKind { stem, cell, pool, global_pool, classifier };

struct LayerInstance {
  LayerKind kind = LayerKind::cell;
  LayerOp op = LayerOp::id;  // stem reports conv3x3, classifier conv1x1
  int stage = -1;
  int cell_index = -1;
  int c_in = 0;
  int c_out = 0;
  int groups = 1;
  int h = 0;  // input spatial size
  int w = 0;
  int out_h = 0;
  int out_w = 0;
  bool transition = false;
  std::int64_t params = 0;
  std::int64_t macs = 0;
  std::int64_t in_elements = 0;
  std::int64_t out_elements = 0;
};

// Flattened layer list of the full network, in execution order, batch 1.
std::vector<LayerInstance> network_layers(const MacroConfig& macro, const CellSpec& cell);

struct CostReport {
  std::int64_t params = 0;
  std::int64_t macs = 0;
  std::int64_t peak_activation_bytes = 0;
  std::int64_t param_bytes = 0;
  friend bool operator==(const CostReport&, const CostReport&) = default;
};

inline constexpr std::int64_t kScalarBytes = 4;

CostReport summarize(const std::vector<LayerInstance>& layers);
CostReport network_cost(const MacroConfig& macro, const CellSpec& cell);

}  // namespace dpp
