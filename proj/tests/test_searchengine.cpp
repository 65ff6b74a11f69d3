#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

#include "dpp/csv.hpp"
#include "dpp/searchengine.hpp"
#include "pareto_oracle.hpp"

using namespace dpp;

namespace {

const std::string kProfiles = DPP_SOURCE_DIR "/profiles/";

// Small surrogate so the loop tests stay quick.
SearchConfig quick_config() {
  SearchConfig c;
  c.surrogate.embedding_size = 16;
  c.surrogate.hidden_size = 16;
  c.surrogate.epochs = 40;
  c.devices = {load_profile(kProfiles + "gpu-like.json"), load_profile(kProfiles + "mobile-like.json")};
  return c;
}

std::vector<const Candidate*> rows_at(const RunLedger& l, int iteration) {
  std::vector<const Candidate*> out;
  for (const auto& c : l.candidates) {
    if (c.iteration == iteration) out.push_back(&c);
  }
  return out;
}

std::size_t count_selected(const std::vector<const Candidate*>& rows) {
  return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [](auto* c) { return c->selected; }));
}

}  // namespace

TEST_CASE("config validation") {
  SearchConfig c = quick_config();
  CHECK_NOTHROW(c.validate());
  c.start_depth = 3;
  c.end_depth = 2;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = quick_config();
  c.k = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = quick_config();
  c.hard_constraints["latency@nowhere"] = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = quick_config();
  c.evaluator.id = "crystal-ball";
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = quick_config();
  c.evaluator.id = "trainer";
  CHECK_THROWS_AS(c.validate(), ConfigError);  // cifar macro does not fit the synthetic data
  c = quick_config();
  c.devices.push_back(c.devices.front());
  CHECK_THROWS_AS(c.validate(), ConfigError);

  c = quick_config();
  c.memory_objective = true;
  c.measure_latency = true;
  std::vector<std::string> names;
  for (const auto& o : objective_schema(c)) names.push_back(o.name);
  CHECK(names == std::vector<std::string>{"error", "params", "macs", "latency@gpu-like", "latency@mobile-like",
                                          "latency@host", "memory"});

  c = quick_config();
  c.hard_constraints["latency"] = 0.5;
  c.devices[0].hard_constraints["latency"] = 0.25;
  const auto mu = resolve_constraints(c);
  REQUIRE(mu.size() == 2);
  CHECK(mu[0].name == "latency@gpu-like");
  CHECK(mu[0].bound == 0.25);
  CHECK(mu[1].name == "latency@mobile-like");
  CHECK(mu[1].bound == 0.5);
}

TEST_CASE("loop arithmetic, selection and front") {
  const SearchConfig config = quick_config();
  const RunLedger l = run(config);

  const auto base = rows_at(l, 0);
  const auto it1 = rows_at(l, 1);
  const auto it2 = rows_at(l, 2);
  CHECK(base.size() == 18);
  CHECK(it1.size() == 18 * 3);
  CHECK(count_selected(it1) == 54);
  CHECK(it2.size() == count_selected(it1) * 6);
  CHECK(count_selected(it2) == 128);
  CHECK(l.surrogate_logs.size() == 3);
  CHECK(l.surrogate_logs[2].training_pairs == 18 + 54 + 128);

  std::set<std::string> seen;
  std::size_t evaluated = 0;
  for (const auto& c : l.candidates) {
    CHECK(seen.insert(c.cell.str()).second);
    CHECK(c.evaluation.has_value() == c.selected);
    if (c.iteration > 0) CHECK(c.predicted.has_value());
    evaluated += c.evaluation ? 1 : 0;
  }
  CHECK(evaluated <= 18 + 54 + 128);

  // The dpp selection never leaves a dominating child behind when the first
  // front is at least K wide.
  std::vector<ObjectiveVector> v;
  for (auto* c : it2) v.push_back(objective_vector(*c, l.schema, true));
  const auto fronts = testing::brute_force_sort(v);
  if (fronts.front().size() >= config.k) {
    for (std::size_t i = 0; i < it2.size(); ++i) {
      if (!it2[i]->selected) continue;
      for (std::size_t j = 0; j < it2.size(); ++j) {
        if (!it2[j]->selected) CHECK_FALSE(testing::oracle_dominates(v[j], v[i]));
      }
    }
  }

  // Final front: non-dominated under observed error, among evaluated rows.
  std::vector<std::size_t> members;
  std::vector<ObjectiveVector> observed;
  for (std::size_t i = 0; i < l.candidates.size(); ++i) {
    if (l.candidates[i].evaluation) {
      members.push_back(i);
      observed.push_back(objective_vector(l.candidates[i], l.schema, false));
    }
  }
  std::vector<std::size_t> expected;
  for (std::size_t f : testing::brute_force_front(observed)) expected.push_back(members[f]);
  CHECK(l.front == expected);

  const FinalReport report = final_report(l);
  CHECK(report.picks.size() == 4);
  for (const auto& p : report.picks) CHECK(std::find(l.front.begin(), l.front.end(), p.candidate) != l.front.end());
}

TEST_CASE("runs are reproducible") {
  SearchConfig c = quick_config();
  c.end_depth = 3;
  const RunLedger a = run(c);
  const RunLedger b = run(c);
  CHECK(ledger_csv(a) == ledger_csv(b));
  CHECK(surrogate_log_csv(a) == surrogate_log_csv(b));
  CHECK(front_json(a, final_report(a)) == front_json(b, final_report(b)));
  c.seed = 1;
  CHECK(ledger_csv(run(c)) != ledger_csv(a));
}

TEST_CASE("small K truncates the base canonically") {
  SearchConfig c = quick_config();
  c.k = 5;
  c.end_depth = 3;
  const RunLedger l = run(c);
  auto all = enumerate(2);
  std::sort(all.begin(), all.end(), CanonicalLess{});
  const auto base = rows_at(l, 0);
  REQUIRE(base.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) CHECK(base[i]->cell == all[i]);
  CHECK(rows_at(l, 1).size() == 5 * 3);
  CHECK(count_selected(rows_at(l, 1)) == 5);
}

TEST_CASE("pnas mode keeps the best predictions") {
  SearchConfig c = quick_config();
  c.mode = SelectionMode::pnas;
  c.k = 40;
  const RunLedger l = run(c);
  // Re-rank the ledger text, so the check also covers the CSV round trip.
  const CsvTable t = parse_csv(ledger_csv(l));
  const auto it = t.column("iteration"), cell = t.column("cell"), pred = t.column("predicted"),
             sel = t.column("selected");
  std::vector<std::pair<double, std::string>> ranked;
  std::set<std::string> chosen;
  for (const auto& row : t.rows) {
    if (row[it] != "2") continue;
    ranked.emplace_back(-std::stod(row[pred]), row[cell]);
    if (row[sel] == "1") chosen.insert(row[cell]);
  }
  std::sort(ranked.begin(), ranked.end());
  std::set<std::string> expected;
  for (std::size_t i = 0; i < 40; ++i) expected.insert(ranked[i].second);
  CHECK(chosen == expected);
}

TEST_CASE("hard constraints") {
  SearchConfig c = quick_config();
  c.end_depth = 3;
  c.hard_constraints["latency@mobile-like"] = 0.1;
  const RunLedger l = run(c);
  std::size_t selected = 0;
  for (const auto& cand : l.candidates) {
    if (!cand.selected) continue;
    ++selected;
    CHECK(cand.latency[1].seconds <= 0.1);
  }
  CHECK(selected > 0);

  c.hard_constraints["latency@mobile-like"] = 0.0;
  try {
    (void)run(c);
    FAIL("expected an infeasible run");
  } catch (const InfeasibleError& e) {
    CHECK(e.violated() == std::vector<std::string>{"latency@mobile-like"});
    CHECK(std::string(e.what()).find("latency@mobile-like") != std::string::npos);
  }
}

TEST_CASE("picks") {
  const auto schema = make_schema({{"error", Direction::minimize}, {"params", Direction::minimize},
                                   {"latency@dev", Direction::minimize}});
  const auto point = [&](double e, double p, double lat) {
    return ObjectiveVector{schema, Eigen::Vector3d(e, p, lat)};
  };
  // A is fastest and has the lowest error; B is never worst on anything.
  const std::vector<ObjectiveVector> pts{point(0.10, 30, 1.0), point(0.13, 20, 2.0), point(0.50, 10, 3.0)};
  const std::vector<std::string> keys{"A", "B", "C"};
  const std::vector<std::size_t> front{0, 1, 2};
  CHECK(testing::brute_force_front(pts) == front);
  CHECK(device_pick(pts, keys, front, 0, 2) == 0);
  const std::vector<std::size_t> all{0, 1, 2};
  CHECK(panacea_pick(pts, keys, front, all) == 1);

  const std::vector<std::size_t> one{2};
  CHECK(device_pick(pts, keys, one, 0, 2) == 2);
  CHECK(panacea_pick(pts, keys, one, all) == 2);

  // A single-candidate run names it twice.
  SearchConfig c = quick_config();
  c.start_depth = c.end_depth = 1;
  c.k = 1;
  const RunLedger l = run(c);
  REQUIRE(l.candidates.size() == 1);
  const FinalReport r = final_report(l);
  for (const auto& p : r.picks) CHECK(p.candidate == 0);
}

TEST_CASE("run files") {
  SearchConfig c = quick_config();
  c.end_depth = 2;
  const RunLedger l = run(c);
  const auto dir = std::filesystem::temp_directory_path() / "dpp_run_files";
  std::filesystem::remove_all(dir);
  write_run_files(l, final_report(l), dir);
  for (const char* f : {"ledger.csv", "latency.csv", "surrogate_log.csv", "front.json"}) {
    CHECK(std::filesystem::exists(dir / f));
  }
  const CsvTable lat = parse_csv(latency_csv(l));
  CHECK(lat.header == std::vector<std::string>{"device", "cell", "seconds", "method", "repeats"});
  CHECK(lat.rows.size() == 18 * 2);
  const CsvTable led = parse_csv(ledger_csv(l));
  CHECK(to_csv(led) == ledger_csv(l));
  std::filesystem::remove_all(dir);
}
