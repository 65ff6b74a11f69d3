#include "dpp/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include "dpp/csv.hpp"
#include "dpp/engine_config.hpp"
#include "dpp/searchengine.hpp"

namespace dpp {

namespace {

// Thrown for bad flag values found after parsing.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError(fmt::format("cannot read '{}'", path));
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", path.string()));
}

// --- search --------------------------------------------------------------

struct SearchArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string mode;
};

int cmd_search(const SearchArgs& a, std::ostream& out, std::ostream& err) {
  EngineConfig cfg = load_engine_config(a.config);
  if (a.seed) cfg.search.seed = *a.seed;
  if (!a.mode.empty()) cfg.search.mode = parse_selection_mode(a.mode);
  if (const char* env = std::getenv(kRunDirEnv); env && *env) cfg.run_dir = env;
  if (!a.out.empty()) cfg.run_dir = a.out;
  cfg.search.validate();

  std::filesystem::create_directories(cfg.run_dir);
  write_text(cfg.run_dir / "config.json", engine_config_to_json(cfg));
  RunHooks hooks;
  if (cfg.checkpoints) {
    hooks.on_fit = [&](int iteration, const SurrogateModel<double>& model) {
      model.save(cfg.run_dir / fmt::format("surrogate_iter{}.txt", iteration));
    };
  }
  RunLedger ledger;
  try {
    ledger = run(cfg.search, hooks);
  } catch (const InfeasibleError& e) {
    err << "infeasible: " << e.what() << "\n";
    return kExitInfeasible;
  }
  const FinalReport report = final_report(ledger);
  write_run_files(ledger, report, cfg.run_dir);

  std::size_t evaluated = 0;
  for (const auto& c : ledger.candidates) evaluated += c.evaluation ? 1 : 0;
  fmt::print(out, "run directory: {}\n", cfg.run_dir.string());
  fmt::print(out, "candidates scored: {}, truly evaluated: {}, front size: {}\n", ledger.candidates.size(), evaluated,
             report.front.size());
  for (const auto& p : report.picks) {
    const Candidate& c = ledger.candidates[p.candidate];
    fmt::print(out, "{}{}: {} (accuracy {:.4f})\n", p.kind, p.device.empty() ? "" : "[" + p.device + "]",
               c.cell.str(), c.evaluation->accuracy);
  }
  return kExitOk;
}

// --- enumerate -----------------------------------------------------------

int cmd_enumerate(int layers, bool count_only, std::size_t cap, std::ostream& out) {
  if (layers < 1) throw UsageError("--layers must be >= 1");
  const auto depth = static_cast<std::size_t>(layers);
  if (count_only) {
    out << space_size(depth) << "\n";
    return kExitOk;
  }
  for (const auto& cell : enumerate(depth, cap)) out << cell.str() << "\n";
  return kExitOk;
}

// --- cost ----------------------------------------------------------------

std::string_view kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::stem: return "stem";
    case LayerKind::cell: return "cell";
    case LayerKind::pool: return "pool";
    case LayerKind::global_pool: return "global_pool";
    case LayerKind::classifier: return "classifier";
  }
  return "?";
}

int cmd_cost(const std::string& cell_text, const std::string& macro_arg, const std::string& csv_path,
             std::ostream& out) {
  const CellSpec cell = CellSpec::parse(cell_text);
  const MacroConfig macro = load_macro(macro_arg);
  const auto layers = network_layers(macro, cell);
  const CostReport total = summarize(layers);

  CsvTable t;
  t.header = {"kind", "stage", "cell_index", "op", "c_in", "c_out", "groups", "h", "w", "transition", "params", "macs"};
  for (const auto& l : layers) {
    const bool has_op = l.kind != LayerKind::pool && l.kind != LayerKind::global_pool;
    t.rows.push_back({std::string(kind_name(l.kind)), std::to_string(l.stage), std::to_string(l.cell_index),
                      has_op ? std::string(token_name(l.op)) : "", std::to_string(l.c_in), std::to_string(l.c_out),
                      std::to_string(l.groups), std::to_string(l.h), std::to_string(l.w), l.transition ? "1" : "0",
                      std::to_string(l.params), std::to_string(l.macs)});
  }

  // The cell body repeats; print one instance per stage to keep the table short.
  fmt::print(out, "cell {}\n", cell.str());
  fmt::print(out, "{:<12}{:>6}{:>6} {:<10}{:>7}{:>7}{:>7}{:>5}{:>5}{:>4}{:>12}{:>14}\n", "kind", "stage", "idx", "op",
             "c_in", "c_out", "groups", "h", "w", "tr", "params", "macs");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.kind == LayerKind::cell && l.cell_index > 0) continue;
    const auto& r = t.rows[i];
    fmt::print(out, "{:<12}{:>6}{:>6} {:<10}{:>7}{:>7}{:>7}{:>5}{:>5}{:>4}{:>12}{:>14}\n", r[0], r[1], r[2], r[3], r[4],
               r[5], r[6], r[7], r[8], r[9], r[10], r[11]);
  }
  fmt::print(out, "total params: {}\ntotal macs: {}\nparam bytes: {}\npeak activation bytes: {}\nmemory bytes: {}\n",
             total.params, total.macs, total.param_bytes, total.peak_activation_bytes,
             total.param_bytes + total.peak_activation_bytes);

  if (!csv_path.empty()) {
    t.rows.push_back({"total", "", "", "", "", "", "", "", "", "", std::to_string(total.params),
                      std::to_string(total.macs)});
    write_text(csv_path, to_csv(t));
  }
  return kExitOk;
}

// --- bench ---------------------------------------------------------------

struct BenchArgs {
  std::string cell;
  int all_depth = 0;
  std::string macro = "cifar";
  std::vector<std::string> profiles;
  bool measure = false;
  int repeats = 50;
  int warmup = 10;
  std::string out;
};

int cmd_bench(const BenchArgs& a, std::ostream& out) {
  if (a.profiles.empty() == !a.measure) throw UsageError("give exactly one of --profile or --measure");
  if (a.cell.empty() == (a.all_depth == 0)) throw UsageError("give exactly one of --cell or --all-depth");
  if (a.measure && (a.repeats < 3 || a.warmup < 1)) throw UsageError("--measure needs --repeats >= 3 and --warmup >= 1");
  const MacroConfig macro = load_macro(a.macro);
  std::vector<DeviceProfile> profiles;
  for (const auto& p : a.profiles) profiles.push_back(load_profile(p));
  const MeasureOptions opts{a.repeats, a.warmup, 0};
  const auto bench = [&](const CellSpec& cell) {
    std::vector<LatencyReport> reports;
    for (const auto& p : profiles) reports.push_back(profile_latency(p, macro, cell));
    if (a.measure) reports.push_back(measure_latency(macro, cell, opts));
    return reports;
  };

  CsvTable t;
  if (!a.cell.empty()) {
    t.header = {"device", "cell", "seconds", "method", "repeats", "iqr"};
    for (const auto& r : bench(CellSpec::parse(a.cell))) {
      t.rows.push_back({r.device_name, r.cell, format_double(r.seconds), std::string(to_string(r.method)),
                        std::to_string(r.repeats), format_double(r.iqr)});
    }
  } else {
    if (a.all_depth < 1) throw UsageError("--all-depth must be >= 1");
    std::vector<std::pair<CellSpec, std::vector<LatencyReport>>> rows;
    for (const auto& cell : enumerate(static_cast<std::size_t>(a.all_depth))) rows.emplace_back(cell, bench(cell));
    std::sort(rows.begin(), rows.end(), [](const auto& x, const auto& y) {
      if (x.second[0].seconds != y.second[0].seconds) return x.second[0].seconds < y.second[0].seconds;
      return x.first.str() < y.first.str();
    });
    t.header = {"cell"};
    for (const auto& r : rows.front().second) t.header.push_back(latency_objective(r.device_name));
    for (const auto& [cell, reports] : rows) {
      std::vector<std::string> row{cell.str()};
      for (const auto& r : reports) row.push_back(format_double(r.seconds));
      t.rows.push_back(std::move(row));
    }
  }
  if (a.out.empty()) {
    out << to_csv(t);
  } else {
    write_text(a.out, to_csv(t));
  }
  return kExitOk;
}

// --- pareto --------------------------------------------------------------

struct ParetoArgs {
  std::string input;
  std::string objectives;
  std::string hard;
  std::size_t k = 0;
  std::string mode = "dpp";
  std::string rank_by;
  std::string out;
};

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) {
    if (!cur.empty()) parts.push_back(cur);
  }
  return parts;
}

double cell_number(const CsvTable& t, std::size_t row, std::ptrdiff_t col) {
  const std::string& text = t.rows[row][static_cast<std::size_t>(col)];
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size()) {
    throw UsageError(fmt::format("row {}, column '{}': '{}' is not a number", row + 1, t.header[col], text));
  }
  return v;
}

int cmd_pareto(const ParetoArgs& a, std::ostream& out) {
  const CsvTable in = parse_csv(read_text(a.input));
  ObjectiveSchema schema;
  std::vector<std::ptrdiff_t> cols;
  for (const auto& spec : split(a.objectives, ',')) {
    const auto colon = spec.rfind(':');
    if (colon == std::string::npos) throw UsageError(fmt::format("objective '{}' must be name:min or name:max", spec));
    const std::string name = spec.substr(0, colon);
    const std::string dir = spec.substr(colon + 1);
    if (dir != "min" && dir != "max") throw UsageError(fmt::format("objective '{}': direction must be min or max", spec));
    const auto col = in.column(name);
    if (col < 0) throw UsageError(fmt::format("unknown column '{}'", name));
    schema.push_back({name, dir == "min" ? Direction::minimize : Direction::maximize});
    cols.push_back(col);
  }
  if (schema.empty()) throw UsageError("--objectives names no objective");
  const auto shared = make_schema(schema);

  std::vector<std::pair<std::ptrdiff_t, HardConstraint>> hard;
  for (const auto& spec : split(a.hard, ',')) {
    const auto le = spec.find("<=");
    const auto ge = spec.find(">=");
    const auto at = le != std::string::npos ? le : ge;
    if (at == std::string::npos) throw UsageError(fmt::format("constraint '{}' must be name<=value or name>=value", spec));
    HardConstraint c{spec.substr(0, at), 0.0, le != std::string::npos ? Bound::at_most : Bound::at_least};
    try {
      c.bound = std::stod(spec.substr(at + 2));
    } catch (const std::exception&) {
      throw UsageError(fmt::format("constraint '{}': bad bound", spec));
    }
    const auto col = in.column(c.name);
    if (col < 0) throw UsageError(fmt::format("unknown column '{}'", c.name));
    hard.emplace_back(col, c);
  }

  const auto key_col = in.column("cell");
  std::vector<ObjectiveVector> points;
  std::vector<std::string> keys;
  std::vector<std::size_t> feasible_rows;
  std::vector<bool> feasible(in.rows.size(), true);
  for (std::size_t r = 0; r < in.rows.size(); ++r) {
    for (const auto& [col, c] : hard) feasible[r] = feasible[r] && c.satisfied_by(cell_number(in, r, col));
    if (!feasible[r]) continue;
    ObjectiveVector v{shared, Eigen::VectorXd(static_cast<Eigen::Index>(cols.size()))};
    for (std::size_t j = 0; j < cols.size(); ++j) v.values[static_cast<Eigen::Index>(j)] = cell_number(in, r, cols[j]);
    points.push_back(std::move(v));
    keys.push_back(key_col >= 0 ? in.rows[r][static_cast<std::size_t>(key_col)] : fmt::format("{:08}", r));
    feasible_rows.push_back(r);
  }

  std::vector<std::string> rank(in.rows.size());
  const auto fronts = nondominated_sort(points);
  for (std::size_t f = 0; f < fronts.size(); ++f) {
    for (std::size_t i : fronts[f]) rank[feasible_rows[i]] = std::to_string(f + 1);
  }
  std::vector<bool> selected(in.rows.size(), false);
  if (a.k > 0) {
    SelectOptions opts{parse_selection_mode(a.mode), a.rank_by.empty() ? schema.front().name : a.rank_by};
    if (find_objective(schema, opts.ranking_objective) < 0) {
      throw UsageError(fmt::format("--rank-by '{}' is not one of the objectives", opts.ranking_objective));
    }
    for (std::size_t i : select_k(points, keys, a.k, {}, opts)) selected[feasible_rows[i]] = true;
  }

  CsvTable t = in;
  t.header.push_back("feasible");
  t.header.push_back("front_rank");
  if (a.k > 0) t.header.push_back("selected");
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    t.rows[r].push_back(feasible[r] ? "1" : "0");
    t.rows[r].push_back(rank[r]);
    if (a.k > 0) t.rows[r].push_back(selected[r] ? "1" : "0");
  }
  if (a.out.empty()) {
    out << to_csv(t);
  } else {
    write_text(a.out, to_csv(t));
  }
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Device-aware progressive architecture search", "dppnas"};
  app.require_subcommand(1);

  SearchArgs search;
  auto* s = app.add_subcommand("search", "Run the progressive search loop");
  s->add_option("--config", search.config, "Engine config (JSON)")->required();
  s->add_option("--out", search.out, "Run directory (overrides the config and $" + std::string(kRunDirEnv) + ")");
  s->add_option("--seed", search.seed, "Seed override");
  s->add_option("--mode", search.mode, "Selection mode override")->check(CLI::IsMember({"dpp", "pnas"}));

  int layers = 0;
  bool count_only = false;
  std::size_t cap = 1'000'000;
  auto* e = app.add_subcommand("enumerate", "List every cell of a depth");
  e->add_option("--layers", layers, "Cell depth")->required();
  e->add_flag("--count-only", count_only, "Print only the count");
  e->add_option("--cap", cap, "Refuse to list more cells than this");

  std::string cell, macro = "cifar", csv;
  auto* c = app.add_subcommand("cost", "Per-layer parameter and MAC table");
  c->add_option("--cell", cell, "Cell string, e.g. bn_relu|conv3x3")->required();
  c->add_option("--macro", macro, "Macro config file, or cifar / desk");
  c->add_option("--csv", csv, "Also write the table as CSV");

  BenchArgs bench;
  auto* b = app.add_subcommand("bench", "Latency from device profiles or host measurement");
  b->add_option("--cell", bench.cell, "Cell string");
  b->add_option("--all-depth", bench.all_depth, "Sweep every cell of this depth");
  b->add_option("--macro", bench.macro, "Macro config file, or cifar / desk");
  b->add_option("--profile", bench.profiles, "Device profile (repeatable)");
  b->add_flag("--measure", bench.measure, "Measure on this host");
  b->add_option("--repeats", bench.repeats, "Timed repeats");
  b->add_option("--warmup", bench.warmup, "Untimed warmup runs");
  b->add_option("--out", bench.out, "Write CSV here instead of stdout");

  ParetoArgs pareto;
  auto* p = app.add_subcommand("pareto", "Front ranks and K-selection over a CSV");
  p->add_option("--input", pareto.input, "CSV with a header row")->required();
  p->add_option("--objectives", pareto.objectives, "name:min|max,...")->required();
  p->add_option("--hard", pareto.hard, "name<=v,name>=v,...");
  p->add_option("--k", pareto.k, "Select this many rows");
  p->add_option("--mode", pareto.mode, "dpp or pnas")->check(CLI::IsMember({"dpp", "pnas"}));
  p->add_option("--rank-by", pareto.rank_by, "pnas ranking column (default: first objective)");
  p->add_option("--out", pareto.out, "Write CSV here instead of stdout");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitConfig;
  }

  try {
    if (s->parsed()) return cmd_search(search, out, err);
    if (e->parsed()) return cmd_enumerate(layers, count_only, cap, out);
    if (c->parsed()) return cmd_cost(cell, macro, csv, out);
    if (b->parsed()) return cmd_bench(bench, out);
    if (p->parsed()) return cmd_pareto(pareto, out);
  } catch (const InfeasibleError& ex) {
    err << "infeasible: " << ex.what() << "\n";
    return kExitInfeasible;
  } catch (const ParseError& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& ex) {  // ConfigError, usage, schema errors
    err << "error: " << ex.what() << "\n";
    return kExitConfig;
  } catch (const std::length_error& ex) {  // capacity
    err << "error: " << ex.what() << "\n";
    return kExitConfig;
  } catch (const ProfileError& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitConfig;
  } catch (const CsvError& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitRuntime;
  }
  return kExitRuntime;
}

}  // namespace dpp
