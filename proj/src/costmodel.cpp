#include "dpp/costmodel.hpp"

#include <algorithm>
#include <numeric>

#include <fmt/format.h>

namespace dpp {

int MacroConfig::stem_width() const {
  if (stem_channels) return *stem_channels;
  return stages.empty() ? 0 : 2 * stages.front().growth;
}

void MacroConfig::validate() const {
  if (stages.empty()) throw ConfigError("macro config needs at least one stage");
  for (std::size_t s = 0; s < stages.size(); ++s) {
    if (stages[s].repeats < 1 || stages[s].growth < 1) {
      throw ConfigError(fmt::format("stage {}: repeats and growth must be >= 1", s));
    }
  }
  if (height < 1 || width < 1 || channels < 1) throw ConfigError("input dims must be >= 1");
  if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
  if (stem_width() < 1) throw ConfigError("stem_channels must be >= 1");
  if (groups < 1) throw ConfigError("groups must be >= 1");
  if (bottleneck_multiplier < 1) throw ConfigError("bottleneck_multiplier must be >= 1");
  int h = height;
  int w = width;
  for (std::size_t s = 1; s < stages.size(); ++s) {
    h /= 2;
    w /= 2;
    if (h < 1 || w < 1) {
      throw ConfigError(fmt::format("feature map underflow before stage {} ({}x{} input)", s, height, width));
    }
  }
}

MacroConfig MacroConfig::cifar() {
  MacroConfig m;
  m.stages = {{14, 8}, {14, 16}, {14, 32}};
  return m;
}

MacroConfig MacroConfig::desk() {
  MacroConfig m;
  m.stages = {{2, 4}, {2, 8}};
  m.height = 8;
  m.width = 8;
  m.num_classes = 4;
  return m;
}

int effective_groups(LayerOp op, int c_in, int c_out, int requested) {
  if (op == LayerOp::dwconv3x3) return c_in;
  if (!is_grouped(op)) return 1;
  return std::gcd(std::gcd(c_in, c_out), std::max(requested, 1));
}

namespace {

void check_shape(LayerOp op, int c_in, int c_out, int groups) {
  if (c_in < 1 || c_out < 1) {
    throw ShapeError(fmt::format("{}: channels must be >= 1 (got {} -> {})", token_name(op), c_in, c_out));
  }
  if (op == LayerOp::dwconv3x3 && c_in != c_out) {
    throw ShapeError(fmt::format("dwconv3x3: c_out ({}) must equal c_in ({})", c_out, c_in));
  }
  if (is_norm(op) && c_in != c_out) {
    throw ShapeError(fmt::format("{}: c_out ({}) must equal c_in ({})", token_name(op), c_out, c_in));
  }
  if (c_in % groups != 0 || c_out % groups != 0) {
    throw ShapeError(fmt::format("{}: {} -> {} not divisible by {} groups", token_name(op), c_in, c_out, groups));
  }
}

std::int64_t conv_weights(LayerOp op, std::int64_t c_in, std::int64_t c_out, std::int64_t groups) {
  const std::int64_t k = kernel_size(op);
  return k * k * (c_in / groups) * c_out;
}

}  // namespace

std::int64_t op_params(LayerOp op, int c_in, int c_out, int groups) {
  const int g = effective_groups(op, c_in, c_out, groups);
  check_shape(op, c_in, c_out, g);
  switch (op) {
    case LayerOp::bn_relu:
    case LayerOp::bn:
      return 2 * static_cast<std::int64_t>(c_in);
    case LayerOp::id:
      return 0;
    default:
      return conv_weights(op, c_in, c_out, g);
  }
}

std::int64_t op_macs(LayerOp op, int c_in, int c_out, int h, int w, int groups) {
  if (h < 1 || w < 1) throw ShapeError(fmt::format("{}: spatial dims must be >= 1", token_name(op)));
  const int g = effective_groups(op, c_in, c_out, groups);
  check_shape(op, c_in, c_out, g);
  if (is_norm(op)) return 0;
  return static_cast<std::int64_t>(h) * w * conv_weights(op, c_in, c_out, g);
}

ShapedCell shape_cell(const CellSpec& cell, int in_channels, int growth, int bottleneck_multiplier, int groups) {
  if (in_channels < 1 || growth < 1) throw ShapeError("shape_cell: in_channels and growth must be >= 1");
  ShapedCell shaped;
  shaped.cell = cell;
  shaped.in_channels = in_channels;
  shaped.growth = growth;

  std::size_t last_conv = cell.depth();
  for (std::size_t i = 0; i < cell.depth(); ++i) {
    if (is_conv(cell[i])) last_conv = i;
  }

  int width = in_channels;
  for (std::size_t i = 0; i < cell.depth(); ++i) {
    const LayerOp op = cell[i];
    int out = width;
    if (is_conv(op) && op != LayerOp::dwconv3x3) {
      out = (i == last_conv) ? growth : bottleneck_multiplier * growth;
    }
    shaped.layers.push_back({op, width, out, effective_groups(op, width, out, groups), false});
    width = out;
  }
  if (last_conv == cell.depth() || cell[last_conv] == LayerOp::dwconv3x3) {
    const LayerOp op = LayerOp::lgconv1x1;
    shaped.layers.push_back({op, width, growth, effective_groups(op, width, growth, groups), true});
    shaped.has_transition = true;
    width = growth;
  }
  shaped.out_channels = width;
  return shaped;
}

std::vector<LayerInstance> network_layers(const MacroConfig& macro, const CellSpec& cell) {
  macro.validate();
  if (cell.empty()) throw std::invalid_argument("network_layers: empty cell");

  std::vector<LayerInstance> out;
  int h = macro.height;
  int w = macro.width;
  const auto spatial = [&](int c) { return static_cast<std::int64_t>(c) * h * w; };

  LayerInstance stem;
  stem.kind = LayerKind::stem;
  stem.op = LayerOp::conv3x3;
  stem.c_in = macro.channels;
  stem.c_out = macro.stem_width();
  stem.h = stem.out_h = h;
  stem.w = stem.out_w = w;
  stem.params = op_params(stem.op, stem.c_in, stem.c_out);
  stem.macs = op_macs(stem.op, stem.c_in, stem.c_out, h, w);
  stem.in_elements = spatial(stem.c_in);
  stem.out_elements = spatial(stem.c_out);
  out.push_back(stem);

  int channels = stem.c_out;
  for (std::size_t s = 0; s < macro.stages.size(); ++s) {
    if (s > 0) {
      LayerInstance pool;
      pool.kind = LayerKind::pool;
      pool.stage = static_cast<int>(s);
      pool.c_in = pool.c_out = channels;
      pool.h = h;
      pool.w = w;
      pool.in_elements = spatial(channels);
      h /= 2;
      w /= 2;
      pool.out_h = h;
      pool.out_w = w;
      pool.out_elements = spatial(channels);
      out.push_back(pool);
    }
    const Stage& stage = macro.stages[s];
    for (int j = 0; j < stage.repeats; ++j) {
      const ShapedCell shaped =
          shape_cell(cell, channels, stage.growth, macro.bottleneck_multiplier, macro.groups);
      for (const ShapedLayer& layer : shaped.layers) {
        LayerInstance li;
        li.kind = LayerKind::cell;
        li.op = layer.op;
        li.stage = static_cast<int>(s);
        li.cell_index = j;
        li.c_in = layer.c_in;
        li.c_out = layer.c_out;
        li.groups = layer.groups;
        li.h = li.out_h = h;
        li.w = li.out_w = w;
        li.transition = layer.transition;
        li.params = op_params(layer.op, layer.c_in, layer.c_out, macro.groups);
        li.macs = op_macs(layer.op, layer.c_in, layer.c_out, h, w, macro.groups);
        li.in_elements = spatial(layer.c_in);
        li.out_elements = spatial(layer.c_out);
        out.push_back(li);
      }
      channels += stage.growth;
    }
  }

  LayerInstance gap;
  gap.kind = LayerKind::global_pool;
  gap.c_in = gap.c_out = channels;
  gap.h = h;
  gap.w = w;
  gap.out_h = gap.out_w = 1;
  gap.in_elements = spatial(channels);
  gap.out_elements = channels;
  out.push_back(gap);

  LayerInstance fc;
  fc.kind = LayerKind::classifier;
  fc.op = LayerOp::conv1x1;
  fc.c_in = channels;
  fc.c_out = macro.num_classes;
  fc.h = fc.w = fc.out_h = fc.out_w = 1;
  fc.params = static_cast<std::int64_t>(channels) * macro.num_classes;
  fc.macs = fc.params;
  fc.in_elements = channels;
  fc.out_elements = macro.num_classes;
  out.push_back(fc);
  return out;
}

CostReport summarize(const std::vector<LayerInstance>& layers) {
  CostReport report;
  std::int64_t peak = 0;
  for (const LayerInstance& li : layers) {
    report.params += li.params;
    report.macs += li.macs;
    peak = std::max(peak, li.in_elements + li.out_elements);
  }
  report.peak_activation_bytes = kScalarBytes * peak;
  report.param_bytes = kScalarBytes * report.params;
  return report;
}

CostReport network_cost(const MacroConfig& macro, const CellSpec& cell) {
  return summarize(network_layers(macro, cell));
}

}  // namespace dpp
