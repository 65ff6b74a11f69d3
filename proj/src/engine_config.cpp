#include "dpp/engine_config.hpp"

#include <algorithm>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

namespace dpp {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string read_file(const std::filesystem::path& path, std::string_view what) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot read {} '{}'", what, path.string()));
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

json parse_json(std::string_view text, std::string_view what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("{} is not valid JSON: {}", what, e.what()));
  }
}

void only_keys(const json& obj, std::string_view where, std::initializer_list<std::string_view> allowed) {
  if (!obj.is_object()) throw ConfigError(fmt::format("{}: expected an object", where));
  for (const auto& [key, _] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError(fmt::format("{}: unknown key '{}'", where, key));
    }
  }
}

template <typename T>
void read(const json& obj, std::string_view where, const char* key, T& out) {
  if (!obj.contains(key)) return;
  const json& v = obj[key];
  bool ok = false;
  if constexpr (std::is_same_v<T, bool>) {
    ok = v.is_boolean();
  } else if constexpr (std::is_integral_v<T>) {
    ok = v.is_number_integer() && (std::is_signed_v<T> || v.get<long long>() >= 0);
  } else if constexpr (std::is_floating_point_v<T>) {
    ok = v.is_number();
  } else {
    ok = v.is_string();
  }
  if (!ok) throw ConfigError(fmt::format("{}.{}: wrong type", where, key));
  out = v.get<T>();
}

MacroConfig macro_from(const json& j) {
  if (j.is_string()) {
    const std::string name = j.get<std::string>();
    if (name == "cifar") return MacroConfig::cifar();
    if (name == "desk") return MacroConfig::desk();
    throw ConfigError(fmt::format("unknown macro preset '{}' (expected cifar or desk)", name));
  }
  only_keys(j, "macro",
            {"stages", "height", "width", "channels", "num_classes", "stem_channels", "groups", "bottleneck_multiplier"});
  MacroConfig m = MacroConfig::cifar();
  if (j.contains("stages")) {
    if (!j["stages"].is_array()) throw ConfigError("macro.stages: expected an array");
    m.stages.clear();
    for (const auto& s : j["stages"]) {
      only_keys(s, "macro.stages[]", {"repeats", "growth"});
      Stage st;
      read(s, "macro.stages[]", "repeats", st.repeats);
      read(s, "macro.stages[]", "growth", st.growth);
      m.stages.push_back(st);
    }
  }
  read(j, "macro", "height", m.height);
  read(j, "macro", "width", m.width);
  read(j, "macro", "channels", m.channels);
  read(j, "macro", "num_classes", m.num_classes);
  if (j.contains("stem_channels") && !j["stem_channels"].is_null()) {
    int stem = 0;
    read(j, "macro", "stem_channels", stem);
    m.stem_channels = stem;
  }
  read(j, "macro", "groups", m.groups);
  read(j, "macro", "bottleneck_multiplier", m.bottleneck_multiplier);
  m.validate();
  return m;
}

ordered_json macro_json(const MacroConfig& m) {
  ordered_json stages = ordered_json::array();
  for (const auto& s : m.stages) stages.push_back({{"repeats", s.repeats}, {"growth", s.growth}});
  ordered_json j;
  j["stages"] = stages;
  j["height"] = m.height;
  j["width"] = m.width;
  j["channels"] = m.channels;
  j["num_classes"] = m.num_classes;
  j["stem_channels"] = m.stem_channels ? ordered_json(*m.stem_channels) : ordered_json(nullptr);
  j["groups"] = m.groups;
  j["bottleneck_multiplier"] = m.bottleneck_multiplier;
  return j;
}

}  // namespace

MacroConfig parse_macro(std::string_view json_text) { return macro_from(parse_json(json_text, "macro config")); }

MacroConfig load_macro(const std::string& preset_or_path) {
  if (preset_or_path == "cifar") return MacroConfig::cifar();
  if (preset_or_path == "desk") return MacroConfig::desk();
  return parse_macro(read_file(preset_or_path, "macro config"));
}

std::string macro_to_json(const MacroConfig& macro) { return macro_json(macro).dump(2) + "\n"; }

EngineConfig parse_engine_config(std::string_view json_text, const std::filesystem::path& base_dir) {
  const json doc = parse_json(json_text, "config");
  only_keys(doc, "config",
            {"seed", "mode", "start_depth", "end_depth", "k", "evaluator", "macro", "devices", "measure_latency",
             "measure", "memory_objective", "hard_constraints", "surrogate", "run_dir", "checkpoints"});
  EngineConfig cfg;
  SearchConfig& s = cfg.search;
  read(doc, "config", "seed", s.seed);
  if (doc.contains("mode")) {
    if (!doc["mode"].is_string()) throw ConfigError("config.mode: wrong type");
    try {
      s.mode = parse_selection_mode(doc["mode"].get<std::string>());
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  read(doc, "config", "start_depth", s.start_depth);
  read(doc, "config", "end_depth", s.end_depth);
  read(doc, "config", "k", s.k);
  if (doc.contains("evaluator")) {
    const json& e = doc["evaluator"];
    only_keys(e, "evaluator", {"id", "epochs", "learning_rate", "momentum", "batch_size", "group_lasso"});
    read(e, "evaluator", "id", s.evaluator.id);
    read(e, "evaluator", "epochs", s.evaluator.train.epochs);
    read(e, "evaluator", "learning_rate", s.evaluator.train.learning_rate);
    read(e, "evaluator", "momentum", s.evaluator.train.momentum);
    read(e, "evaluator", "batch_size", s.evaluator.train.batch_size);
    read(e, "evaluator", "group_lasso", s.evaluator.train.group_lasso);
  }
  if (doc.contains("macro")) s.macro = macro_from(doc["macro"]);
  if (doc.contains("devices")) {
    if (!doc["devices"].is_array()) throw ConfigError("config.devices: expected an array");
    for (const auto& d : doc["devices"]) {
      try {
        if (d.is_string()) {
          std::filesystem::path p = d.get<std::string>();
          if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
          s.devices.push_back(load_profile(p));
        } else {
          s.devices.push_back(parse_profile(d.dump()));
        }
      } catch (const ProfileError& e) {
        throw ConfigError(fmt::format("config.devices: {}", e.what()));
      }
    }
  }
  read(doc, "config", "measure_latency", s.measure_latency);
  if (doc.contains("measure")) {
    only_keys(doc["measure"], "measure", {"repeats", "warmup"});
    read(doc["measure"], "measure", "repeats", s.measure.repeats);
    read(doc["measure"], "measure", "warmup", s.measure.warmup);
  }
  read(doc, "config", "memory_objective", s.memory_objective);
  if (doc.contains("hard_constraints")) {
    if (!doc["hard_constraints"].is_object()) throw ConfigError("config.hard_constraints: expected an object");
    for (const auto& [key, value] : doc["hard_constraints"].items()) {
      if (!value.is_number()) throw ConfigError(fmt::format("hard_constraints.{}: expected a number", key));
      s.hard_constraints[key] = value.get<double>();
    }
  }
  if (doc.contains("surrogate")) {
    const json& j = doc["surrogate"];
    only_keys(j, "surrogate", {"embedding_size", "hidden_size", "learning_rate", "epochs", "batch_size"});
    read(j, "surrogate", "embedding_size", s.surrogate.embedding_size);
    read(j, "surrogate", "hidden_size", s.surrogate.hidden_size);
    read(j, "surrogate", "learning_rate", s.surrogate.learning_rate);
    read(j, "surrogate", "epochs", s.surrogate.epochs);
    read(j, "surrogate", "batch_size", s.surrogate.batch_size);
  }
  std::string run_dir = cfg.run_dir.string();
  read(doc, "config", "run_dir", run_dir);
  cfg.run_dir = run_dir;
  read(doc, "config", "checkpoints", cfg.checkpoints);
  s.validate();
  return cfg;
}

EngineConfig load_engine_config(const std::filesystem::path& path) {
  return parse_engine_config(read_file(path, "config"), path.parent_path());
}

std::string engine_config_to_json(const EngineConfig& cfg) {
  const SearchConfig& s = cfg.search;
  ordered_json j;
  j["seed"] = s.seed;
  j["mode"] = std::string(to_string(s.mode));
  j["start_depth"] = s.start_depth;
  j["end_depth"] = s.end_depth;
  j["k"] = s.k;
  j["evaluator"] = {{"id", s.evaluator.id},
                    {"epochs", s.evaluator.train.epochs},
                    {"learning_rate", s.evaluator.train.learning_rate},
                    {"momentum", s.evaluator.train.momentum},
                    {"batch_size", s.evaluator.train.batch_size},
                    {"group_lasso", s.evaluator.train.group_lasso}};
  j["macro"] = macro_json(s.macro);
  ordered_json devices = ordered_json::array();
  for (const auto& d : s.devices) devices.push_back(ordered_json::parse(profile_to_json(d)));
  j["devices"] = devices;
  j["measure_latency"] = s.measure_latency;
  j["measure"] = {{"repeats", s.measure.repeats}, {"warmup", s.measure.warmup}};
  j["memory_objective"] = s.memory_objective;
  ordered_json mu = ordered_json::object();
  for (const auto& [k, v] : s.hard_constraints) mu[k] = v;
  j["hard_constraints"] = mu;
  j["surrogate"] = {{"embedding_size", s.surrogate.embedding_size},
                    {"hidden_size", s.surrogate.hidden_size},
                    {"learning_rate", s.surrogate.learning_rate},
                    {"epochs", s.surrogate.epochs},
                    {"batch_size", s.surrogate.batch_size}};
  j["run_dir"] = cfg.run_dir.string();
  j["checkpoints"] = cfg.checkpoints;
  return j.dump(2) + "\n";
}

}  // namespace dpp
