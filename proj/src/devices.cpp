#include "dpp/devices.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <mutex>
#include <sstream>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "dpp/network.hpp"

namespace dpp {

using nlohmann::json;

namespace {

double non_negative(const json& j, std::string_view what) {
  if (!j.is_number()) throw ProfileError(fmt::format("{}: expected a number", what));
  const double v = j.get<double>();
  if (!(v >= 0.0)) throw ProfileError(fmt::format("{}: must be >= 0 (got {})", what, v));
  return v;
}

std::mutex& measurement_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

DeviceProfile parse_profile(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ProfileError(fmt::format("device profile is not valid JSON: {}", e.what()));
  }
  if (!doc.is_object()) throw ProfileError("device profile must be a JSON object");
  for (const auto& [key, _] : doc.items()) {
    if (key != "name" && key != "per_op" && key != "norm_cost_per_element" && key != "hard_constraints") {
      throw ProfileError(fmt::format("unknown device profile key '{}'", key));
    }
  }
  DeviceProfile p;
  if (!doc.contains("name") || !doc["name"].is_string()) throw ProfileError("device profile needs a string 'name'");
  p.name = doc["name"].get<std::string>();
  if (!doc.contains("per_op") || !doc["per_op"].is_object()) throw ProfileError("device profile needs 'per_op'");
  const json& per_op = doc["per_op"];
  for (const auto& [key, _] : per_op.items()) {
    if (!token_from_name(key)) throw ProfileError(fmt::format("per_op: unknown token '{}'", key));
  }
  for (int t = 0; t < kNumTokens; ++t) {
    const std::string name(token_name(token_from_index(t)));
    if (!per_op.contains(name)) throw ProfileError(fmt::format("profile '{}': missing per_op entry for {}", p.name, name));
    const json& e = per_op[name];
    if (!e.is_object()) throw ProfileError(fmt::format("per_op.{}: expected an object", name));
    for (const auto& [key, _] : e.items()) {
      if (key != "cost_per_mac" && key != "overhead") throw ProfileError(fmt::format("per_op.{}: unknown key '{}'", name, key));
    }
    OpCost& c = p.per_op[static_cast<std::size_t>(t)];
    c.cost_per_mac = e.contains("cost_per_mac") ? non_negative(e["cost_per_mac"], "cost_per_mac") : 0.0;
    c.overhead = e.contains("overhead") ? non_negative(e["overhead"], "overhead") : 0.0;
  }
  if (doc.contains("norm_cost_per_element")) {
    p.norm_cost_per_element = non_negative(doc["norm_cost_per_element"], "norm_cost_per_element");
  }
  if (doc.contains("hard_constraints")) {
    if (!doc["hard_constraints"].is_object()) throw ProfileError("hard_constraints must be an object");
    for (const auto& [key, value] : doc["hard_constraints"].items()) {
      if (!value.is_number()) throw ProfileError(fmt::format("hard_constraints.{}: expected a number", key));
      p.hard_constraints[key] = value.get<double>();
    }
  }
  return p;
}

DeviceProfile load_profile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ProfileError(fmt::format("cannot read device profile '{}'", path.string()));
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_profile(buf.str());
}

std::string profile_to_json(const DeviceProfile& profile) {
  json doc;
  doc["name"] = profile.name;
  json per_op = json::object();
  for (int t = 0; t < kNumTokens; ++t) {
    const OpCost& c = profile.per_op[static_cast<std::size_t>(t)];
    per_op[std::string(token_name(token_from_index(t)))] = {{"cost_per_mac", c.cost_per_mac}, {"overhead", c.overhead}};
  }
  doc["per_op"] = per_op;
  doc["norm_cost_per_element"] = profile.norm_cost_per_element;
  if (!profile.hard_constraints.empty()) doc["hard_constraints"] = profile.hard_constraints;
  return doc.dump(2);
}

std::string_view to_string(LatencyMethod method) { return method == LatencyMethod::profile ? "profile" : "measured"; }

LatencyReport profile_latency(const DeviceProfile& profile, const MacroConfig& macro, const CellSpec& cell) {
  double seconds = 0.0;
  for (const LayerInstance& layer : network_layers(macro, cell)) {
    if (layer.kind == LayerKind::pool || layer.kind == LayerKind::global_pool) continue;
    const OpCost& c = profile.cost(layer.op);
    seconds += static_cast<double>(layer.macs) * c.cost_per_mac + c.overhead;
    if (layer.op == LayerOp::bn || layer.op == LayerOp::bn_relu) {
      seconds += static_cast<double>(layer.in_elements) * profile.norm_cost_per_element;
    }
  }
  return {profile.name, cell.str(), seconds, LatencyMethod::profile, 0, 0.0};
}

LatencyReport measure_latency(const MacroConfig& macro, const CellSpec& cell, const MeasureOptions& options) {
  if (options.repeats < 3) throw std::invalid_argument("measure_latency: repeats must be >= 3");
  if (options.warmup < 1) throw std::invalid_argument("measure_latency: warmup must be >= 1");

  std::lock_guard lock(measurement_mutex());
  Network<float> net(macro, cell, options.seed, Mode::eval);
  Tensor4<float> x(1, macro.channels, macro.height, macro.width);
  Rng rng(options.seed + 1);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data[i] = static_cast<float>(rng.normal());

  using Clock = std::chrono::steady_clock;
  std::vector<double> samples;
  samples.reserve(static_cast<std::size_t>(options.repeats));
  volatile float sink = 0.0f;
  for (int r = 0; r < options.warmup + options.repeats; ++r) {
    const auto t0 = Clock::now();
    const MatrixX<float> logits = net.forward(x);
    const auto t1 = Clock::now();
    sink = sink + logits(0, 0);
    if (t1 < t0) throw EnvironmentError("monotonic clock went backwards");
    if (r >= options.warmup) samples.push_back(std::chrono::duration<double>(t1 - t0).count());
  }

  std::sort(samples.begin(), samples.end());
  const auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(samples.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, samples.size() - 1);
    return samples[lo] + (pos - static_cast<double>(lo)) * (samples[hi] - samples[lo]);
  };
  LatencyReport report;
  report.device_name = std::string(kHostDevice);
  report.cell = cell.str();
  report.seconds = quantile(0.5);
  report.iqr = quantile(0.75) - quantile(0.25);
  report.method = LatencyMethod::measured;
  report.repeats = options.repeats;
  return report;
}

std::int64_t memory_usage(const MacroConfig& macro, const CellSpec& cell) {
  const CostReport cost = network_cost(macro, cell);
  return cost.param_bytes + cost.peak_activation_bytes;
}

}  // namespace dpp
