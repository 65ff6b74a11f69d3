#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include <fmt/format.h>

#include "dpp/cli.hpp"
#include "dpp/csv.hpp"
#include "dpp/engine_config.hpp"

using namespace dpp;

namespace {

const std::string kRoot = DPP_SOURCE_DIR;
const std::filesystem::path kTmp = std::filesystem::temp_directory_path() / "dpp_cli_tests";

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::filesystem::path write(const std::string& name, const std::string& text) {
  std::filesystem::create_directories(kTmp);
  const auto p = kTmp / name;
  std::ofstream(p) << text;
  return p;
}

std::int64_t field(const std::string& text, const std::string& label) {
  std::smatch m;
  REQUIRE(std::regex_search(text, m, std::regex(label + ": (\\d+)")));
  return std::stoll(m[1]);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("enumerate") {
  CHECK(cli({"enumerate", "--layers", "4", "--count-only"}).out == "324\n");
  CHECK(cli({"enumerate", "--layers", "3", "--count-only"}).out == "54\n");
  CHECK(cli({"enumerate", "--layers", "1"}).out == "bn_relu\nbn\nid\n");
  const auto two = cli({"enumerate", "--layers", "2"});
  CHECK(two.out.rfind("bn_relu|conv1x1\n", 0) == 0);
  CHECK(cli({"enumerate", "--layers", "0"}).code == kExitConfig);
  CHECK(cli({"enumerate", "--layers", "4", "--cap", "100"}).code == kExitConfig);
  CHECK(cli({}).code == kExitConfig);
  CHECK(cli({"--help"}).code == kExitOk);
}

TEST_CASE("cost matches the library") {
  for (const char* text : {"id", "bn_relu|conv3x3", "bn|lgconv1x1|id|dwconv3x3", "bn_relu|gconv1x1|bn"}) {
    CAPTURE(text);
    const auto r = cli({"cost", "--cell", text});
    REQUIRE(r.code == kExitOk);
    const CostReport lib = network_cost(MacroConfig::cifar(), CellSpec::parse(text));
    CHECK(field(r.out, "total params") == lib.params);
    CHECK(field(r.out, "total macs") == lib.macs);
    CHECK(field(r.out, "memory bytes") == lib.param_bytes + lib.peak_activation_bytes);
  }
  const auto csv_path = kTmp / "cost.csv";
  REQUIRE(cli({"cost", "--cell", "id", "--macro", "desk", "--csv", csv_path.string()}).code == kExitOk);
  const CsvTable t = parse_csv(slurp(csv_path));
  for (const auto& row : t.rows) {
    // The only weights inside an "id" cell body are the flagged transition.
    if (row[t.column("kind")] == "cell" && row[t.column("transition")] == "0") {
      CHECK(row[t.column("params")] == "0");
    }
  }
  CHECK(t.rows.back()[t.column("params")] == std::to_string(network_cost(MacroConfig::desk(), CellSpec::parse("id")).params));

  const auto bad = cli({"cost", "--cell", "bn|conv9x9"});
  CHECK(bad.code == kExitConfig);
  CHECK(bad.err.find("conv9x9") != std::string::npos);
  CHECK(cli({"cost", "--cell", "id", "--macro", "nowhere.json"}).code == kExitConfig);
}

TEST_CASE("bench") {
  const std::string gpu = kRoot + "/profiles/gpu-like.json";
  const std::string mobile = kRoot + "/profiles/mobile-like.json";
  std::string zero = R"({"name": "zero", "per_op": {)";
  for (const char* t : {"bn_relu", "bn", "id", "conv1x1", "conv3x3", "gconv1x1", "gconv3x3", "lgconv1x1"}) {
    zero += fmt::format(R"("{}": {{"cost_per_mac": 0, "overhead": 0}}, )", t);
  }
  zero += R"("dwconv3x3": {"cost_per_mac": 0, "overhead": 0}}})";
  const auto zero_path = write("zero.json", zero).string();

  const auto r = cli({"bench", "--cell", "bn|conv3x3", "--profile", zero_path});
  REQUIRE(r.code == kExitOk);
  const CsvTable t = parse_csv(r.out);
  REQUIRE(t.rows.size() == 1);
  CHECK(std::stod(t.rows[0][t.column("seconds")]) == 0.0);
  CHECK(t.rows[0][t.column("method")] == "profile");

  const auto sweep = cli({"bench", "--all-depth", "4", "--profile", gpu, "--profile", mobile});
  REQUIRE(sweep.code == kExitOk);
  const CsvTable s = parse_csv(sweep.out);
  CHECK(s.rows.size() == 324);
  CHECK(s.header == std::vector<std::string>{"cell", "latency@gpu-like", "latency@mobile-like"});
  for (std::size_t i = 1; i < s.rows.size(); ++i) CHECK(std::stod(s.rows[i - 1][1]) <= std::stod(s.rows[i][1]));

  CHECK(cli({"bench", "--cell", "bn|conv3x3", "--measure", "--repeats", "2"}).code == kExitConfig);
  CHECK(cli({"bench", "--cell", "bn|conv3x3"}).code == kExitConfig);
  CHECK(cli({"bench", "--cell", "bn|conv3x3", "--profile", gpu, "--measure"}).code == kExitConfig);
  CHECK(cli({"bench", "--cell", "bn|conv3x3", "--profile", kRoot + "/profiles/absent.json"}).code == kExitConfig);
  const auto measured = cli({"bench", "--cell", "bn|conv3x3", "--macro", "desk", "--measure", "--repeats", "3"});
  REQUIRE(measured.code == kExitOk);
  CHECK(std::stod(parse_csv(measured.out).rows[0][2]) > 0.0);
}

TEST_CASE("pareto") {
  // Boxes A and B trade off; C is worse than both.
  const auto in = write("boxes.csv", "cell,error,latency\nA,1,4\nB,3,1\nC,4,5\nB_copy,3,1\n").string();
  const auto r = cli({"pareto", "--input", in, "--objectives", "error:min,latency:min"});
  REQUIRE(r.code == kExitOk);
  const CsvTable t = parse_csv(r.out);
  const auto rank = t.column("front_rank");
  CHECK(t.rows[0][rank] == "1");
  CHECK(t.rows[1][rank] == "1");
  CHECK(t.rows[2][rank] == "2");
  CHECK(t.rows[3][rank] == "1");
  CHECK(to_csv(parse_csv(r.out)) == r.out);

  const auto top = cli({"pareto", "--input", in, "--objectives", "error:min,latency:min", "--k", "2", "--mode", "pnas"});
  const CsvTable p = parse_csv(top.out);
  const auto sel = p.column("selected");
  CHECK(p.rows[0][sel] == "1");
  CHECK(p.rows[1][sel] == "1");  // ties with B_copy, wins canonically
  CHECK(p.rows[2][sel] == "0");
  CHECK(p.rows[3][sel] == "0");

  const auto hard = cli({"pareto", "--input", in, "--objectives", "error:min", "--hard", "latency<=2"});
  const CsvTable h = parse_csv(hard.out);
  CHECK(h.rows[0][h.column("feasible")] == "0");
  CHECK(h.rows[0][h.column("front_rank")] == "");
  CHECK(h.rows[1][h.column("front_rank")] == "1");

  CHECK(cli({"pareto", "--input", in, "--objectives", "error:min,speed:max"}).code == kExitConfig);
  CHECK(cli({"pareto", "--input", in, "--objectives", "error:up"}).code == kExitConfig);
}

TEST_CASE("engine config") {
  const EngineConfig def = parse_engine_config("{}");
  CHECK(def.search.k == 128);
  CHECK(def.search.start_depth == 2);
  CHECK(def.search.end_depth == 4);
  CHECK(def.search.macro == MacroConfig::cifar());
  CHECK_THROWS_AS(parse_engine_config(R"({"k": 4, "colour": 1})"), ConfigError);
  CHECK_THROWS_AS(parse_engine_config(R"({"surrogate": {"layers": 2}})"), ConfigError);
  CHECK_THROWS_AS(parse_engine_config(R"({"k": "many"})"), ConfigError);
  CHECK_THROWS_AS(parse_engine_config(R"({"mode": "greedy"})"), ConfigError);
  CHECK_THROWS_AS(parse_engine_config("{"), ConfigError);

  const EngineConfig ex = load_engine_config(kRoot + "/configs/example.json");
  CHECK(ex.search.devices.size() == 2);
  const EngineConfig back = parse_engine_config(engine_config_to_json(ex));
  CHECK(engine_config_to_json(back) == engine_config_to_json(ex));
  CHECK(back.search.devices[1].name == "mobile-like");

  CHECK(parse_macro(macro_to_json(MacroConfig::desk())) == MacroConfig::desk());
  CHECK(parse_macro(R"("desk")") == MacroConfig::desk());
  CHECK_THROWS_AS(parse_macro(R"({"stages": [{"repeats": 1}]})"), ConfigError);
}

TEST_CASE("search") {
  CHECK(cli({"search", "--config", (kTmp / "missing.json").string()}).code == kExitConfig);
  CHECK(cli({"search"}).code == kExitConfig);

  const auto out = kTmp / "example_run";
  std::filesystem::remove_all(out);
  const auto r = cli({"search", "--config", kRoot + "/configs/example.json", "--out", out.string(), "--seed", "0"});
  REQUIRE(r.code == kExitOk);
  const CsvTable ledger = parse_csv(slurp(out / "ledger.csv"));
  CHECK(ledger.rows.size() == 18 + 54 + 324);
  for (const char* f : {"config.json", "front.json", "latency.csv", "surrogate_log.csv", "surrogate_iter0.txt",
                        "surrogate_iter2.txt"}) {
    CHECK(std::filesystem::exists(out / f));
  }
  CHECK(r.out.find("device-pick[gpu-like]") != std::string::npos);
  CHECK(load_engine_config(out / "config.json").run_dir == out);

  const auto impossible = write("impossible.json", "{\"devices\": [\"" + kRoot +
                                                       "/profiles/gpu-like.json\"], \"hard_constraints\": "
                                                       "{\"latency\": 0}, \"end_depth\": 3}");
  const auto inf = cli({"search", "--config", impossible.string(), "--out", (kTmp / "inf").string()});
  CHECK(inf.code == kExitInfeasible);
  CHECK(inf.err.find("latency") != std::string::npos);

  const auto small = write("small.json", R"({"end_depth": 2, "surrogate": {"epochs": 5}, "checkpoints": false})");
  const auto env_dir = kTmp / "from_env";
  std::filesystem::remove_all(env_dir);
  ::setenv(kRunDirEnv, env_dir.string().c_str(), 1);
  CHECK(cli({"search", "--config", small.string(), "--mode", "pnas"}).code == kExitOk);
  ::unsetenv(kRunDirEnv);
  CHECK(std::filesystem::exists(env_dir / "ledger.csv"));
  CHECK_FALSE(std::filesystem::exists(env_dir / "surrogate_iter0.txt"));
  CHECK(load_engine_config(env_dir / "config.json").search.mode == SelectionMode::pnas);
  CHECK(cli({"search", "--config", small.string(), "--mode", "greedy"}).code == kExitConfig);
}
