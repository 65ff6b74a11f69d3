#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>

#include "dpp/cellspace.hpp"
#include "dpp/costmodel.hpp"

namespace dpp {

class ProfileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EnvironmentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct OpCost {
  double cost_per_mac = 0.0;  // seconds
  double overhead = 0.0;      // seconds per op instance
};

// Latency model of a simulated device.
struct DeviceProfile {
  std::string name;
  std::array<OpCost, kNumTokens> per_op{};
  double norm_cost_per_element = 0.0;
  std::map<std::string, double> hard_constraints;  // objective -> upper bound

  const OpCost& cost(LayerOp op) const { return per_op[static_cast<std::size_t>(op)]; }
};

// JSON document with keys name, per_op (all nine tokens), norm_cost_per_element
// and optional hard_constraints. Unknown keys and negative costs are rejected.
DeviceProfile parse_profile(std::string_view json_text);
DeviceProfile load_profile(const std::filesystem::path& path);
std::string profile_to_json(const DeviceProfile& profile);

enum class LatencyMethod { profile, measured };
std::string_view to_string(LatencyMethod method);

struct LatencyReport {
  std::string device_name;
  std::string cell;
  double seconds = 0.0;
  LatencyMethod method = LatencyMethod::profile;
  int repeats = 0;
  double iqr = 0.0;  // measured only
};

// Sum over every op instance of the assembled network of
// macs * cost_per_mac + overhead, plus BN input elements * norm_cost_per_element.
// The stem is costed as conv3x3 and the classifier as conv1x1; pooling is free.
LatencyReport profile_latency(const DeviceProfile& profile, const MacroConfig& macro, const CellSpec& cell);

struct MeasureOptions {
  int repeats = 50;
  int warmup = 10;
  std::uint64_t seed = 0;
};

inline constexpr std::string_view kHostDevice = "host";

// Wall-clock median of the full-network forward pass (batch 1, eval mode,
// single thread) after warmup. Calls are serialized process-wide.
LatencyReport measure_latency(const MacroConfig& macro, const CellSpec& cell, const MeasureOptions& options = {});

// Parameter bytes plus peak activation bytes at batch 1.
std::int64_t memory_usage(const MacroConfig& macro, const CellSpec& cell);

}  // namespace dpp
