#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "dpp/costmodel.hpp"
#include "dpp/searchengine.hpp"

namespace dpp {

// Everything a search run needs, as read from the JSON config file. Unknown
// keys are rejected at every level; omitted keys keep the defaults below.
struct EngineConfig {
  SearchConfig search;
  std::filesystem::path run_dir = "runs/latest";
  bool checkpoints = true;  // surrogate checkpoint per iteration
};

// Relative device profile paths resolve against base_dir.
EngineConfig parse_engine_config(std::string_view json_text, const std::filesystem::path& base_dir = {});
EngineConfig load_engine_config(const std::filesystem::path& path);
// Complete snapshot: every field, device profiles inlined. Parses back to an
// equal config.
std::string engine_config_to_json(const EngineConfig& config);

// A macro object ({"stages": [{"repeats": 14, "growth": 8}, ...], ...}) or
// one of the preset names "cifar" and "desk".
MacroConfig parse_macro(std::string_view json_text);
// Preset name, or a path to a JSON file holding a macro object.
MacroConfig load_macro(const std::string& preset_or_path);
std::string macro_to_json(const MacroConfig& macro);

}  // namespace dpp
